//! Adam training loop and top-1 evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, ModelConfig, Params, SketchClassifier, SketchInput};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 20,
            batch_size: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Full-scale learning rate (global batch 500).
    pub const PAPER_LEARNING_RATE: f64 = 1e-5;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
}

/// Adam with bias correction over a flat parameter buffer.
pub struct Adam {
    cfg: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, n: usize) -> Self {
        Adam {
            cfg: cfg.clone(),
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params<f32>, grads: &Params<f32>) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let lr = self.cfg.learning_rate * (1.0 - b2.powi(self.t)).sqrt() / (1.0 - b1.powi(self.t));
        for (((p, &g), m), v) in params
            .data
            .iter_mut()
            .zip(&grads.data)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let g = g as f64;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= (lr * *m / (v.sqrt() + self.cfg.eps)) as f32;
        }
    }
}

fn inputs(model: &Checkpoint, data: &Dataset) -> Result<(Vec<SketchInput<f32>>, Vec<usize>)> {
    let mut xs = Vec::with_capacity(data.len());
    let mut ys = Vec::with_capacity(data.len());
    for s in &data.samples {
        let label = s
            .sketch
            .label
            .ok_or_else(|| Error::invalid(format!("samples[{}].label", s.id), "missing label"))?;
        xs.push(model.input(&s.sketch));
        ys.push(label);
    }
    Ok((xs, ys))
}

/// Trains a fresh model; `on_epoch` sees each epoch's summary.
pub fn train(
    train_set: &Dataset,
    valid_set: &Dataset,
    model_config: ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    if train_set.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    let mut model = SketchClassifier::<f32>::new(model_config, train_set.categories.clone(), cfg.seed)?;
    let (xs, ys) = inputs(&model, train_set)?;
    let valid = if valid_set.is_empty() {
        None
    } else {
        Some(inputs(&model, valid_set)?)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut adam = Adam::new(cfg, model.params.data.len());
    let mut grads = model.params.zeros_like();
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<&SketchInput<f32>> = chunk.iter().map(|&i| &xs[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            grads.data.fill(0.0);
            let (scores, loss) = model.loss_and_param_grads(&batch, &labels, &mut grads)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite(format!(
                    "training diverged at epoch {epoch} step {step}: loss {loss}"
                )));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += scores
                .iter()
                .zip(&labels)
                .filter(|(s, &y)| s.predicted() == y)
                .count();
            adam.step(&mut model.params, &grads);
        }
        let valid_accuracy = match &valid {
            Some((vx, vy)) => Some(accuracy(&model, vx, vy)?),
            None => None,
        };
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / xs.len() as f64,
            train_accuracy: correct as f64 / xs.len() as f64,
            valid_accuracy,
        };
        log::info!(
            "epoch {} loss {:.4} train acc {:.4} valid acc {:?}",
            log.epoch,
            log.train_loss,
            log.train_accuracy,
            log.valid_accuracy
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}

fn accuracy(model: &Checkpoint, xs: &[SketchInput<f32>], ys: &[usize]) -> Result<f64> {
    if xs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (cx, cy) in xs.chunks(256).zip(ys.chunks(256)) {
        let batch: Vec<&SketchInput<f32>> = cx.iter().collect();
        let scores = model.classify_batch(&batch)?;
        correct += scores.iter().zip(cy).filter(|(s, &y)| s.predicted() == y).count();
    }
    Ok(correct as f64 / xs.len() as f64)
}

/// Top-1 accuracy on a labelled set; an empty set scores 0.
pub fn evaluate(model: &Checkpoint, data: &Dataset) -> Result<f64> {
    let (xs, ys) = inputs(model, data)?;
    accuracy(model, &xs, &ys)
}

/// Fraction of positions where `predicted` equals `truth`; 0 when empty.
pub fn top1(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top1_edges() {
        assert_eq!(top1(&[], &[]), 0.0);
        assert_eq!(top1(&[1, 2, 3], &[0, 0, 0]), 0.0);
        assert_eq!(top1(&[1, 0], &[1, 1]), 0.5);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let cfg = TrainConfig::default();
        let c = ModelConfig::micro(2);
        let mut p = Params::<f32>::init(&c, 0);
        let before = p.data.clone();
        let mut g = p.zeros_like();
        g.data[0] = 1.0;
        g.data[1] = -1.0;
        let mut adam = Adam::new(&cfg, p.data.len());
        adam.step(&mut p, &g);
        // first Adam step moves by ~lr in the sign direction
        assert!(((before[0] - p.data[0]) as f64 - cfg.learning_rate).abs() < 1e-7);
        assert!(((p.data[1] - before[1]) as f64 - cfg.learning_rate).abs() < 1e-7);
        assert_eq!(before[2], p.data[2]);
    }
}
