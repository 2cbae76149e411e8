//! Shape-primitive codebooks learned by clustering stroke embeddings.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans, nearest, sq_dist, KMeans};
use super::{ShapeEmbeddings, StrokeRef};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::{Float, SketchClassifier, SketchInput};
use crate::sketch::Sketch;

pub const CODEBOOK_FORMAT: &str = "sketchxai-codebook/1";

/// The training stroke standing in for a centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub source: StrokeRef,
    pub embedding: Vec<f64>,
    /// `[δx, δy, p₁, p₂]` per point, drawable as is.
    pub shape: Vec<[f64; 4]>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveCodebook {
    pub format: String,
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
    pub representatives: Vec<Representative>,
}

impl PrimitiveCodebook {
    /// Clusters `emb` into `k` primitives; also returns the raw k-means
    /// result for diagnostics.
    pub fn build(emb: &ShapeEmbeddings, k: usize, seed: u64, max_iters: usize) -> Result<(Self, KMeans)> {
        let km = kmeans(emb.matrix.view(), k, seed, max_iters)?;
        let representatives = km
            .centroids
            .rows()
            .into_iter()
            .map(|c| {
                let (row, d) = nearest(emb.matrix.view(), c);
                Representative {
                    source: emb.index[row].clone(),
                    embedding: emb.matrix.row(row).to_vec(),
                    shape: emb.shapes[row].clone(),
                    distance: d.sqrt(),
                }
            })
            .collect();
        let book = PrimitiveCodebook {
            format: CODEBOOK_FORMAT.to_owned(),
            centroids: km.centroids.rows().into_iter().map(|r| r.to_vec()).collect(),
            counts: km.counts(),
            representatives,
        };
        Ok((book, km))
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    fn matrix(rows: impl Iterator<Item = Vec<f64>>, k: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_vec((k, d), rows.flatten().collect()).expect("rectangular codebook")
    }

    pub fn centroid_matrix(&self) -> Array2<f64> {
        Self::matrix(self.centroids.iter().cloned(), self.k(), self.dim())
    }

    pub fn representative_matrix(&self) -> Array2<f64> {
        Self::matrix(self.representatives.iter().map(|r| r.embedding.clone()), self.k(), self.dim())
    }

    fn check(&self, embed_dim: usize) -> Result<()> {
        if self.format != CODEBOOK_FORMAT {
            return Err(Error::Format(format!("unexpected codebook format `{}`", self.format)));
        }
        if self.k() == 0 || self.representatives.len() != self.k() || self.counts.len() != self.k() {
            return Err(Error::Format("codebook tables disagree in size".into()));
        }
        if self.dim() != embed_dim
            || self.centroids.iter().any(|c| c.len() != embed_dim)
            || self.representatives.iter().any(|r| r.embedding.len() != embed_dim)
        {
            return Err(Error::ConfigMismatch(format!(
                "codebook dimension {} does not match embedding dimension {embed_dim}",
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let book: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        book.check(book.dim())?;
        Ok(book)
    }
}

fn to_f<F: Float>(v: f64) -> F {
    F::from_f64(v).expect("representable")
}

/// Top-1 accuracy after replacing every stroke's shape embedding by the
/// embedding of its nearest centroid's representative.
pub fn primitive_replace_accuracy<F: Float>(
    model: &SketchClassifier<F>,
    samples: &[Sample],
    codebook: &PrimitiveCodebook,
) -> Result<f64> {
    codebook.check(model.config.embed_dim)?;
    if samples.is_empty() {
        return Ok(0.0);
    }
    let centroids = codebook.centroid_matrix();
    let reps = codebook.representative_matrix().mapv(to_f::<F>);
    let mut correct = 0usize;
    for chunk in samples.chunks(256) {
        let inputs: Vec<SketchInput<F>> = chunk.iter().map(|s| model.input(&s.sketch)).collect();
        let batch: Vec<&SketchInput<F>> = inputs.iter().collect();
        let mut parts = model.parts(&batch)?;
        if model.config.use_shape {
            for mut row in parts.shape_emb.rows_mut() {
                let x: Array1<f64> = row.mapv(|v| v.to_f64().unwrap());
                let (c, _) = nearest(centroids.view(), x.view());
                row.assign(&reps.row(c));
            }
        }
        for (s, sample) in model.scores_from_parts(&parts).iter().zip(chunk) {
            let label = sample
                .sketch
                .label
                .ok_or_else(|| Error::invalid(format!("samples[{}].label", sample.id), "missing label"))?;
            correct += usize::from(s.predicted() == label);
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeInversionConfig {
    pub steps: usize,
    /// Step size on the shape embeddings before snapping.
    pub lr: f64,
}

impl Default for ShapeInversionConfig {
    fn default() -> Self {
        ShapeInversionConfig { steps: 100, lr: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionStep {
    pub t: usize,
    /// Codebook entry per stroke.
    pub primitive_ids: Vec<usize>,
    pub p_target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeInversion {
    pub target: usize,
    pub config: ShapeInversionConfig,
    pub steps: Vec<InversionStep>,
}

/// Gradient descent on the shape embeddings toward `target`, locations
/// and orders fixed. After every step each embedding is snapped to its
/// nearest primitive (the representative embeddings) and optimisation
/// continues from there. Step 0 is the snapped input sketch.
pub fn shape_inversion<F: Float>(
    model: &SketchClassifier<F>,
    sketch: &Sketch,
    target: usize,
    codebook: &PrimitiveCodebook,
    config: &ShapeInversionConfig,
) -> Result<ShapeInversion> {
    codebook.check(model.config.embed_dim)?;
    if target >= model.config.num_classes {
        return Err(Error::invalid("target", format!("class {target} out of range")));
    }
    let prims = codebook.representative_matrix();
    let prims_f = prims.mapv(to_f::<F>);
    let input = model.input(sketch);
    let mut parts = model.parts(&[&input])?;
    let snap = |emb: &mut Array2<F>| -> Vec<usize> {
        emb.rows_mut()
            .into_iter()
            .map(|mut row| {
                let x: Array1<f64> = row.mapv(|v| v.to_f64().unwrap());
                let (id, _) = nearest(prims.view(), x.view());
                row.assign(&prims_f.row(id));
                id
            })
            .collect()
    };
    let mut ids = snap(&mut parts.shape_emb);
    let mut steps = Vec::with_capacity(config.steps + 1);
    let lr: F = to_f(config.lr);
    for t in 0..=config.steps {
        let (scores, _, grads) = model.input_grads(&parts, &[target]);
        steps.push(InversionStep {
            t,
            primitive_ids: ids.clone(),
            p_target: scores[0].probabilities[target],
        });
        if t == config.steps {
            break;
        }
        parts.shape_emb.scaled_add(-lr, &grads.shape_emb);
        ids = snap(&mut parts.shape_emb);
    }
    Ok(ShapeInversion {
        target,
        config: config.clone(),
        steps,
    })
}

/// Squared distance from `x` to primitive `id`; exposed for checking the
/// snapping rule.
pub fn primitive_distance(codebook: &PrimitiveCodebook, id: usize, x: &[f64]) -> f64 {
    let e = &codebook.representatives[id].embedding;
    sq_dist(ndarray::ArrayView1::from(e.as_slice()), ndarray::ArrayView1::from(x))
}

#[cfg(test)]
mod tests {
    use super::super::collect_shape_embeddings;
    use super::*;
    use crate::model::ModelConfig;
    use crate::sketch::{Point, Stroke};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (SketchClassifier<f64>, Vec<Sample>) {
        let m = SketchClassifier::new(ModelConfig::micro(3), vec!["a".into(), "b".into(), "c".into()], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = (0..12)
            .map(|id| {
                let strokes = (0..rng.random_range(1..4))
                    .map(|_| {
                        Stroke::new(
                            (0..4)
                                .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                                .collect(),
                        )
                    })
                    .collect();
                Sample {
                    id,
                    sketch: Sketch::new(strokes, Some(id % 3)),
                }
            })
            .collect();
        (m, samples)
    }

    #[test]
    fn representative_is_nearest_training_stroke() {
        let (m, samples) = setup();
        let emb = collect_shape_embeddings(&m, &samples).unwrap();
        let (book, _) = PrimitiveCodebook::build(&emb, 4, 1, 50).unwrap();
        for (c, rep) in book.centroids.iter().zip(&book.representatives) {
            let c = ndarray::ArrayView1::from(c.as_slice());
            let best = emb.matrix.rows().into_iter().map(|r| sq_dist(r, c)).fold(f64::INFINITY, f64::min);
            assert!((rep.distance * rep.distance - best).abs() < 1e-9);
        }
        assert_eq!(book.counts.iter().sum::<usize>(), emb.matrix.nrows());
    }

    #[test]
    fn full_codebook_is_identity_replacement() {
        let (m, samples) = setup();
        let emb = collect_shape_embeddings(&m, &samples).unwrap();
        let (book, km) = PrimitiveCodebook::build(&emb, emb.matrix.nrows(), 1, 50).unwrap();
        assert_eq!(km.inertia(), 0.0);
        let plain = {
            let correct = samples
                .iter()
                .filter(|s| m.classify_sketch(&s.sketch).unwrap().predicted() == s.sketch.label.unwrap())
                .count();
            correct as f64 / samples.len() as f64
        };
        assert_eq!(primitive_replace_accuracy(&m, &samples, &book).unwrap(), plain);
    }

    #[test]
    fn shape_inversion_snaps_into_codebook() {
        let (m, samples) = setup();
        let emb = collect_shape_embeddings(&m, &samples).unwrap();
        let (book, _) = PrimitiveCodebook::build(&emb, 5, 2, 50).unwrap();
        let sketch = &samples[4].sketch;
        let zero = shape_inversion(&m, sketch, 1, &book, &ShapeInversionConfig { steps: 0, lr: 1.0 }).unwrap();
        assert_eq!(zero.steps.len(), 1);
        // step 0 is the nearest-primitive assignment of the sketch's strokes
        let input = m.input(sketch);
        let own = m.parts(&[&input]).unwrap().shape_emb;
        for (row, &id) in own.rows().into_iter().zip(&zero.steps[0].primitive_ids) {
            let x = row.to_vec();
            for other in 0..book.k() {
                assert!(primitive_distance(&book, id, &x) <= primitive_distance(&book, other, &x));
            }
        }
        let run = shape_inversion(&m, sketch, 1, &book, &ShapeInversionConfig { steps: 10, lr: 50.0 }).unwrap();
        assert_eq!(run.steps.len(), 11);
        assert!(run.steps.iter().all(|s| s.primitive_ids.iter().all(|&i| i < book.k())));
        assert!(run.steps.iter().all(|s| (0.0..=1.0).contains(&s.p_target)));
    }

    #[test]
    fn codebook_json_round_trip_and_checks() {
        let (m, samples) = setup();
        let emb = collect_shape_embeddings(&m, &samples).unwrap();
        let (book, _) = PrimitiveCodebook::build(&emb, 3, 2, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("book.json");
        book.save(&path).unwrap();
        assert_eq!(PrimitiveCodebook::load(&path).unwrap(), book);
        let small = SketchClassifier::<f64>::new(
            ModelConfig {
                embed_dim: 32,
                ..ModelConfig::micro(3)
            },
            vec!["a".into(), "b".into(), "c".into()],
            0,
        )
        .unwrap();
        assert!(matches!(
            primitive_replace_accuracy(&small, &samples, &book),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
