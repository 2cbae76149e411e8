//! Reader and writer for the simplified QuickDraw NDJSON schema.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::sketch::{Point, Sketch, Stroke};

/// One stroke as `[[x0, x1, ...], [y0, y1, ...]]`.
pub type RawStroke = Vec<Vec<f64>>;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recognized: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_id: Option<String>,
    pub drawing: Vec<RawStroke>,
}

impl Record {
    pub fn to_sketch(&self, label: Option<usize>) -> Result<Sketch> {
        let mut strokes = Vec::with_capacity(self.drawing.len());
        for (i, s) in self.drawing.iter().enumerate() {
            let [xs, ys] = match s.as_slice() {
                [xs, ys, ..] => [xs, ys],
                _ => return Err(Error::invalid(format!("drawing[{i}]"), "expected [xs, ys]")),
            };
            if xs.len() != ys.len() {
                return Err(Error::invalid(format!("drawing[{i}]"), "x/y length mismatch"));
            }
            if xs.is_empty() {
                continue;
            }
            strokes.push(Stroke::new(
                xs.iter().zip(ys).map(|(&x, &y)| Point::new(x, y)).collect(),
            ));
        }
        if strokes.is_empty() {
            return Err(Error::invalid("drawing", "no strokes"));
        }
        Ok(Sketch::new(strokes, label))
    }

    pub fn from_sketch(word: &str, key: u64, sketch: &Sketch) -> Self {
        let drawing = sketch
            .strokes
            .iter()
            .map(|s| {
                vec![
                    s.points.iter().map(|p| p.x).collect(),
                    s.points.iter().map(|p| p.y).collect(),
                ]
            })
            .collect();
        Record {
            word: Some(word.to_owned()),
            recognized: Some(true),
            key_id: Some(format!("{key:016}")),
            drawing,
        }
    }
}

/// Result of reading a set of category files.
#[derive(Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    /// Lines that failed to parse and were skipped.
    pub skipped: usize,
}

/// Reads `<dir>/<category>.ndjson` for each category, keeping at most
/// `per_class_limit` sketches per file in file order. Labels follow the
/// position in `categories`. Coordinates are left in raw `[0, 255]` units.
pub fn load_quickdraw(dir: &Path, categories: &[String], per_class_limit: usize) -> Result<Loaded> {
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (label, cat) in categories.iter().enumerate() {
        let path = dir.join(format!("{cat}.ndjson"));
        let file = File::open(&path).map_err(|_| Error::MissingCategory(cat.clone(), path.clone()))?;
        let before = samples.len();
        for line in BufReader::new(file).lines() {
            if samples.len() - before >= per_class_limit {
                break;
            }
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Record>(&line)
                .map_err(Error::from)
                .and_then(|r| r.to_sketch(Some(label)));
            match parsed {
                Ok(sketch) => samples.push(Sample {
                    id: samples.len(),
                    sketch,
                }),
                Err(e) => {
                    log::warn!("{}: skipping malformed line: {e}", path.display());
                    skipped += 1;
                }
            }
        }
        if samples.len() == before {
            return Err(Error::EmptyCategory(cat.clone()));
        }
    }
    Ok(Loaded {
        dataset: Dataset {
            categories: categories.to_vec(),
            samples,
        },
        skipped,
    })
}

pub fn write_ndjson<'a>(
    path: &Path,
    word: &str,
    sketches: impl IntoIterator<Item = &'a Sketch>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for (key, s) in sketches.into_iter().enumerate() {
        serde_json::to_writer(&mut out, &Record::from_sketch(word, key as u64, s))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
