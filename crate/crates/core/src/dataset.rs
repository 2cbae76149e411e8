//! Labelled sketch collections: preprocessing, stratified splits and the
//! on-disk cache.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rdp::simplify_sketch;
use crate::sketch::{normalize, Sketch};

pub const CACHE_FORMAT: &str = "sketchxai-dataset/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub sketch: Sketch,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub categories: Vec<String>,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: String,
    #[serde(flatten)]
    dataset: Dataset,
}

/// Per-class sample counts for a three-way split.
#[derive(Clone, Copy, Debug)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 70K / 2.5K / 2.5K per class.
    pub const FULL: SplitSizes = SplitSizes {
        train: 70_000,
        valid: 2_500,
        test: 2_500,
    };
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sketches(&self) -> impl Iterator<Item = &Sketch> {
        self.samples.iter().map(|s| &s.sketch)
    }

    pub fn of_class(&self, label: usize) -> impl Iterator<Item = &Sample> {
        self.samples
            .iter()
            .filter(move |s| s.sketch.label == Some(label))
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_owned()))
    }

    /// Normalizes raw `[0, 255]` coordinates and applies RDP.
    pub fn preprocess(&self, epsilon: f64) -> Result<Dataset> {
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let sketch = simplify_sketch(&normalize(&s.sketch)?, epsilon)?;
                Ok(Sample { id: s.id, sketch })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            categories: self.categories.clone(),
            samples,
        })
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            categories: self.categories.clone(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Stratified, disjoint split; each class is shuffled with its own
    /// stream derived from `seed`.
    pub fn split(&self, sizes: SplitSizes, seed: u64) -> Result<Split> {
        let mut train = Vec::new();
        let mut valid = Vec::new();
        let mut test = Vec::new();
        for (label, name) in self.categories.iter().enumerate() {
            let mut idx: Vec<usize> = (0..self.samples.len())
                .filter(|&i| self.samples[i].sketch.label == Some(label))
                .collect();
            let need = sizes.train + sizes.valid + sizes.test;
            if idx.len() < need {
                return Err(Error::InsufficientSamples {
                    class: name.clone(),
                    available: idx.len(),
                    requested: need,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            idx.shuffle(&mut rng);
            train.extend_from_slice(&idx[..sizes.train]);
            valid.extend_from_slice(&idx[sizes.train..sizes.train + sizes.valid]);
            test.extend_from_slice(&idx[sizes.train + sizes.valid..need]);
        }
        Ok(Split {
            train: self.subset(&train),
            valid: self.subset(&valid),
            test: self.subset(&test),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(
            file,
            &CacheFile {
                format: CACHE_FORMAT.to_owned(),
                dataset: self.clone(),
            },
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let cache: CacheFile = serde_json::from_reader(file)?;
        if cache.format != CACHE_FORMAT {
            return Err(Error::Format(format!(
                "dataset cache tag `{}`, expected `{CACHE_FORMAT}`",
                cache.format
            )));
        }
        Ok(cache.dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point, Stroke};
    use std::collections::HashSet;

    fn toy(per_class: usize, classes: usize) -> Dataset {
        let mut samples = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                let p = Point::new(i as f64, c as f64);
                samples.push(Sample {
                    id: samples.len(),
                    sketch: Sketch::new(vec![Stroke::new(vec![p, p])], Some(c)),
                });
            }
        }
        Dataset {
            categories: (0..classes).map(|c| format!("c{c}")).collect(),
            samples,
        }
    }

    fn ids(d: &Dataset) -> HashSet<usize> {
        d.samples.iter().map(|s| s.id).collect()
    }

    #[test]
    fn split_is_disjoint_and_sized() {
        let d = toy(6000, 2);
        let s = d
            .split(SplitSizes { train: 5000, valid: 500, test: 500 }, 11)
            .unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (10_000, 1000, 1000));
        let (a, b, c) = (ids(&s.train), ids(&s.valid), ids(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(s.test.of_class(1).count(), 500);
    }

    #[test]
    fn split_is_deterministic() {
        let d = toy(50, 3);
        let sizes = SplitSizes { train: 30, valid: 10, test: 10 };
        let a = d.split(sizes, 5).unwrap();
        let b = d.split(sizes, 5).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = d.split(sizes, 6).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn full_scale_split_sizes() {
        let d = toy(75_000, 1);
        let s = d.split(SplitSizes::FULL, 0).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (70_000, 2_500, 2_500));
    }

    #[test]
    fn insufficient_names_class() {
        let d = toy(10, 2);
        match d.split(SplitSizes { train: 8, valid: 2, test: 1 }, 0) {
            Err(Error::InsufficientSamples { class, .. }) => assert_eq!(class, "c0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cache_round_trip_and_tag_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let d = toy(3, 2);
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
        let text = std::fs::read_to_string(&path).unwrap().replace(CACHE_FORMAT, "other/9");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(Dataset::load(&path), Err(Error::Format(_))));
    }
}
