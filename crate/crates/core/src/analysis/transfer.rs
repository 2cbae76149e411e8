//! Pairwise SLI transfer maps between categories.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::save_matrix_csv;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{Float, SketchClassifier};
use crate::sketch::Sketch;
use crate::sli::{run_sli, SliConfig, TaskKind};

pub const TRANSFER_FORMAT: &str = "sketchxai-transfer-map/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMap {
    pub format: String,
    pub categories: Vec<String>,
    /// `matrix[target][source]`: mean final target-class probability of
    /// runs started from `source` sketches. The diagonal holds recovery.
    pub matrix: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub per_class: usize,
    pub config: SliConfig,
    pub seed: u64,
}

impl TransferMap {
    pub fn to_array(&self) -> Array2<f64> {
        let k = self.categories.len();
        Array2::from_shape_fn((k, k), |(i, j)| self.matrix[i][j])
    }

    /// Mean of row `target` without its diagonal entry.
    pub fn off_diagonal_mean(&self, target: usize) -> f64 {
        let row = &self.matrix[target];
        if row.len() < 2 {
            return 0.0;
        }
        let sum: f64 = row.iter().enumerate().filter(|&(j, _)| j != target).map(|(_, v)| v).sum();
        sum / (row.len() - 1) as f64
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut p = csv.as_os_str().to_owned();
        p.push(".json");
        PathBuf::from(p)
    }

    /// Writes the CSV (rows = target, columns = source) and a JSON sidecar
    /// with the full record.
    pub fn save(&self, csv: &Path) -> Result<()> {
        save_matrix_csv(csv, "target\\source", &self.categories, &self.categories, &self.to_array())?;
        std::fs::write(Self::sidecar_path(csv), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

struct Run {
    source: usize,
    target: usize,
    sketch: Sketch,
    seed: u64,
}

fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("transfer worker panicked")?);
        }
        Ok(out)
    })
}

/// Runs SLI from the first `per_class` sketches of every class in
/// `classes` to every class in `classes`: recovery on the diagonal,
/// transfer elsewhere. Each run gets its own seed derived from `seed`.
pub fn transfer_map<F: Float>(
    model: &SketchClassifier<F>,
    samples: &[Sample],
    classes: &[usize],
    per_class: usize,
    config: &SliConfig,
    seed: u64,
) -> Result<TransferMap> {
    config.validate()?;
    if classes.is_empty() || per_class == 0 {
        return Err(Error::invalid("classes", "need at least one class and one sample"));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= model.config.num_classes) {
        return Err(Error::invalid("classes", format!("class {c} out of range")));
    }
    let mut runs = Vec::new();
    for (si, &source) in classes.iter().enumerate() {
        let picked: Vec<&Sample> = samples
            .iter()
            .filter(|s| s.sketch.label == Some(source))
            .take(per_class)
            .collect();
        if picked.len() < per_class {
            return Err(Error::InsufficientSamples {
                class: model.categories[source].clone(),
                available: picked.len(),
                requested: per_class,
            });
        }
        for (n, sample) in picked.into_iter().enumerate() {
            for ti in 0..classes.len() {
                runs.push(Run {
                    source: si,
                    target: ti,
                    sketch: sample.sketch.clone(),
                    seed: seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(((si * per_class + n) * classes.len() + ti) as u64),
                });
            }
        }
    }
    let finals = parallel_map(&runs, |r| {
        let target = classes[r.target];
        let cfg = SliConfig {
            task: if r.source == r.target {
                TaskKind::Recovery
            } else {
                TaskKind::Transfer
            },
            target: Some(target),
            seed: r.seed,
            ..config.clone()
        };
        let traj = run_sli(model, &r.sketch, &cfg)?;
        Ok(traj.frames.last().map_or(0.0, |f| f.p_target))
    })?;
    let k = classes.len();
    let mut matrix = vec![vec![0.0; k]; k];
    let mut counts = vec![vec![0usize; k]; k];
    for (r, p) in runs.iter().zip(finals) {
        matrix[r.target][r.source] += p;
        counts[r.target][r.source] += 1;
    }
    for (row, crow) in matrix.iter_mut().zip(&counts) {
        for (v, &c) in row.iter_mut().zip(crow) {
            *v /= c as f64;
        }
    }
    Ok(TransferMap {
        format: TRANSFER_FORMAT.to_owned(),
        categories: classes.iter().map(|&c| model.categories[c].clone()).collect(),
        matrix,
        counts,
        per_class,
        config: config.clone(),
        seed,
    })
}
