//! Checkpoint container.
//!
//! Layout of a checkpoint file (all integers little endian):
//!
//! ```text
//! magic    8 bytes  "SKXAICKP"
//! version  u32      1
//! hlen     u32      length of the JSON header in bytes
//! header   hlen     JSON: format, version, dtype, config, categories,
//!                   tensors [{name, shape, offset}]  (offset in elements)
//! data     f32 * N  every tensor back to back in header order
//! ```
//!
//! The same header is written pretty-printed to `<file>.json` next to the
//! container for inspection; loading only reads the container.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{Layout, Params};
use super::Checkpoint;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SKXAICKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub config: ModelConfig,
    pub categories: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

impl Header {
    fn of(ckpt: &Checkpoint) -> Self {
        Header {
            format: "sketchxai-checkpoint".into(),
            version: VERSION,
            dtype: "f32".into(),
            config: ckpt.config.clone(),
            categories: ckpt.categories.clone(),
            tensors: ckpt
                .params
                .layout
                .named
                .iter()
                .map(|(name, s)| TensorEntry {
                    name: name.clone(),
                    shape: [s.rows, s.cols],
                    offset: s.offset,
                })
                .collect(),
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header::of(self))?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for x in &self.params.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let hlen = u32::from_le_bytes(word) as usize;
        if r.len() < hlen {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..hlen])?;
        r = &r[hlen..];
        if header.dtype != "f32" {
            return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
        }
        header.config.validate()?;
        let layout = Layout::new(&header.config);
        let expect: Vec<TensorEntry> = layout
            .named
            .iter()
            .map(|(name, s)| TensorEntry {
                name: name.clone(),
                shape: [s.rows, s.cols],
                offset: s.offset,
            })
            .collect();
        if expect != header.tensors {
            return Err(Error::Format("tensor table does not match config".into()));
        }
        if r.len() != 4 * layout.total {
            return Err(Error::Format(format!(
                "expected {} parameter bytes, found {}",
                4 * layout.total,
                r.len()
            )));
        }
        let data = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Checkpoint {
            config: header.config,
            categories: header.categories,
            params: Params {
                layout: Arc::new(layout),
                data,
            },
        })
    }

    /// Writes the container and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        let sidecar = serde_json::to_string_pretty(&Header::of(self))?;
        std::fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SketchClassifier;

    fn model() -> Checkpoint {
        let cats = (0..3).map(|i| format!("c{i}")).collect();
        SketchClassifier::new(ModelConfig { depth: 1, ..ModelConfig::micro(3) }, cats, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.skx");
        m.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.categories, m.categories);
        let a: Vec<u32> = m.params.data.iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.params.data.iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let m = model();
        let mut bytes = m.to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
        let mut bytes = m.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
