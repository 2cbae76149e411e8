//! Stroke location inversion.
//!
//! Only stroke locations are free. Shapes and orders stay fixed, so the
//! shape embeddings are computed once per run and every step is a single
//! encoder pass plus its backward pass down to the location inputs.

use std::io::Write;
use std::ops::ControlFlow;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassScores, Float, SketchClassifier, SketchInput, StrokeParts};
use crate::repr::{recompose, DecomposedStroke, PenState, ShapePoint};
use crate::sketch::{Point, Sketch};

pub const TRAJECTORY_FORMAT: &str = "sketchxai-trajectory/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Relocate strokes at random, then optimize toward the sketch's own class.
    Recovery,
    /// Start from the drawn layout and optimize toward another class.
    Transfer,
    /// Transfer plus an L1 penalty on the total displacement.
    Counterfactual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitStrategy {
    /// `l ~ N(0, σ²I)`, clamped to the canvas.
    RandomNormal { sigma: f64 },
    /// Every stroke starts at the canvas centre.
    Centre,
}

impl Default for InitStrategy {
    fn default() -> Self {
        InitStrategy::RandomNormal { sigma: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SliConfig {
    pub task: TaskKind,
    /// Target class; recovery defaults to the sketch label.
    pub target: Option<usize>,
    pub steps: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Per-axis bound on the displacement applied in one step.
    pub max_move: f64,
    pub init: InitStrategy,
    /// Weight of the displacement penalty in counterfactual runs.
    pub lambda: f64,
    pub seed: u64,
    /// Stop once the target probability reaches this value.
    pub stop_at_confidence: Option<f64>,
}

impl Default for SliConfig {
    fn default() -> Self {
        SliConfig {
            task: TaskKind::Recovery,
            target: None,
            steps: 100,
            lr_max: 10.0,
            lr_min: 1e-5,
            max_move: 0.5,
            init: InitStrategy::default(),
            lambda: 0.1,
            seed: 0,
            stop_at_confidence: None,
        }
    }
}

impl SliConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::invalid("config.lr", "need lr_max > lr_min > 0"));
        }
        if !(self.max_move > 0.0) {
            return Err(Error::invalid("config.max_move", "must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("config.steps", "must be at least 1"));
        }
        if let InitStrategy::RandomNormal { sigma } = self.init {
            if !(sigma >= 0.0) {
                return Err(Error::invalid("config.init.sigma", "must be non-negative"));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("config.lambda", "must be non-negative"));
        }
        Ok(())
    }
}

/// `η(t) = η_min + ½(η_max − η_min)(1 + cos(πt/T))`
pub fn cosine_step_size(t: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    let frac = t as f64 / total.max(1) as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Clamps each component of a proposed displacement to `[-cap, cap]`.
pub fn clamp_displacement(delta: [f64; 2], cap: f64) -> [f64; 2] {
    delta.map(|d| d.clamp(-cap, cap))
}

/// Replaces stroke locations according to `strategy`; shapes and orders
/// are untouched.
pub fn relocate(sketch: &Sketch, strategy: InitStrategy, seed: u64) -> Sketch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = sketch.strokes.iter().filter(|s| !s.is_empty()).count();
    let mut locs = initial_locations(real, strategy, &mut rng).into_iter();
    Sketch::new(
        sketch
            .strokes
            .iter()
            .map(|s| match s.first() {
                Some(first) => s.translate(locs.next().expect("location per stroke").sub(first)),
                None => s.clone(),
            })
            .collect(),
        sketch.label,
    )
}

fn initial_locations(n: usize, strategy: InitStrategy, rng: &mut ChaCha8Rng) -> Vec<Point> {
    match strategy {
        InitStrategy::Centre => vec![Point::default(); n],
        InitStrategy::RandomNormal { sigma } => {
            let normal = Normal::new(0.0, sigma).expect("sigma validated");
            (0..n)
                .map(|_| {
                    let x: f64 = normal.sample(rng);
                    let y: f64 = normal.sample(rng);
                    Point::new(x.clamp(-1.0, 1.0), y.clamp(-1.0, 1.0))
                })
                .collect()
        }
    }
}

/// `CE(scores, target) + λ Σᵢ ‖lᵢ − lᵢ⁰‖₁`
pub fn counterfactual_loss(
    scores: &ClassScores,
    target: usize,
    locations: &[[f64; 2]],
    initial: &[[f64; 2]],
    lambda: f64,
) -> f64 {
    scores.loss(target) + lambda * l1_distance(locations, initial)
}

fn l1_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs())
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub locations: Vec<[f64; 2]>,
    pub p_orig: f64,
    pub p_target: f64,
    pub loss: f64,
}

/// Location-free part of a stroke as carried in a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeShape {
    pub order: usize,
    /// `[δx, δy, p₁, p₂]` per real point
    pub shape: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub format: String,
    pub original_label: usize,
    pub target_label: usize,
    #[serde(default)]
    pub categories: Vec<String>,
    pub config: SliConfig,
    pub seed: u64,
    pub strokes: Vec<StrokeShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    pub frames: Vec<Frame>,
}

impl Trajectory {
    /// Sketch drawn by frame `t`.
    pub fn sketch_at(&self, t: usize) -> Sketch {
        let frame = &self.frames[t];
        let strokes: Vec<DecomposedStroke> = self
            .header
            .strokes
            .iter()
            .zip(&frame.locations)
            .map(|(s, l)| DecomposedStroke {
                order: s.order,
                location: Point::from(*l),
                shape: s
                    .shape
                    .iter()
                    .map(|v| ShapePoint {
                        dx: v[0],
                        dy: v[1],
                        pen: PenState::from_bits(v[2], v[3]).unwrap_or(PenState::Drawing),
                    })
                    .collect(),
            })
            .collect();
        recompose(&strokes, Some(self.header.original_label))
    }

    /// Header line followed by one line per frame.
    pub fn write_ndjson(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut out, f)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Copy with every frame value rounded to `digits` decimals, for
    /// exports that must compare byte for byte across platforms.
    pub fn rounded(&self, digits: u32) -> Trajectory {
        let scale = 10f64.powi(digits as i32);
        let r = |v: f64| (v * scale).round() / scale;
        Trajectory {
            header: self.header.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| Frame {
                    t: f.t,
                    locations: f.locations.iter().map(|l| l.map(r)).collect(),
                    p_orig: r(f.p_orig),
                    p_target: r(f.p_target),
                    loss: r(f.loss),
                })
                .collect(),
        }
    }

    pub fn to_ndjson(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf)?;
        Ok(buf)
    }

    pub fn read_ndjson(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: TrajectoryHeader =
            serde_json::from_str(lines.next().ok_or_else(|| Error::Format("empty trajectory".into()))?)?;
        if header.format != TRAJECTORY_FORMAT {
            return Err(Error::Format(format!("trajectory tag `{}`", header.format)));
        }
        let frames = lines
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect::<Result<Vec<Frame>>>()?;
        Ok(Trajectory { header, frames })
    }
}

/// One optimization problem: fixed shapes and orders, free locations.
pub struct SliProblem<'m, F> {
    model: &'m SketchClassifier<F>,
    parts: StrokeParts<F>,
    pub target: usize,
    pub original: usize,
    pub initial: Vec<[f64; 2]>,
    lambda: f64,
}

/// Result of evaluating the objective at one layout.
pub struct Evaluation {
    pub scores: ClassScores,
    pub loss: f64,
    pub gradient: Vec<[f64; 2]>,
}

impl<'m, F: Float> SliProblem<'m, F> {
    pub fn new(
        model: &'m SketchClassifier<F>,
        input: &SketchInput<F>,
        original: usize,
        target: usize,
        lambda: f64,
    ) -> Result<Self> {
        let parts = model.parts(&[input])?;
        let initial = input
            .strokes
            .iter()
            .map(|s| [s.location[0].to_f64().unwrap(), s.location[1].to_f64().unwrap()])
            .collect();
        Ok(SliProblem {
            model,
            parts,
            target,
            original,
            initial,
            lambda,
        })
    }

    pub fn evaluate(&mut self, locations: &[[f64; 2]]) -> Result<Evaluation> {
        self.parts.locations = Array2::from_shape_fn((locations.len(), 2), |(i, k)| {
            F::from_f64(locations[i][k]).expect("finite")
        });
        let (mut scores, ce, g) = self.model.input_grads(&self.parts, &[self.target]);
        let scores = scores.remove(0);
        let mut gradient: Vec<[f64; 2]> = g
            .locations
            .rows()
            .into_iter()
            .map(|r| [r[0].to_f64().unwrap(), r[1].to_f64().unwrap()])
            .collect();
        let mut loss = ce;
        if self.lambda > 0.0 {
            loss += self.lambda * l1_distance(locations, &self.initial);
            for (g, (l, l0)) in gradient.iter_mut().zip(locations.iter().zip(&self.initial)) {
                for k in 0..2 {
                    g[k] += self.lambda * sign(l[k] - l0[k]);
                }
            }
        }
        if !loss.is_finite() || gradient.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "SLI objective: loss {loss}, locations {locations:?}"
            )));
        }
        Ok(Evaluation {
            scores,
            loss,
            gradient,
        })
    }

    /// One clipped gradient-descent step at step size `eta`.
    pub fn step(&mut self, locations: &[[f64; 2]], eta: f64, cap: f64) -> Result<(Vec<[f64; 2]>, Evaluation)> {
        let eval = self.evaluate(locations)?;
        let next = apply_step(locations, &eval.gradient, eta, cap);
        Ok((next, eval))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `l ← l + clamp(−η∇, −c, c)`; locations themselves are not clamped.
pub fn apply_step(locations: &[[f64; 2]], gradient: &[[f64; 2]], eta: f64, cap: f64) -> Vec<[f64; 2]> {
    locations
        .iter()
        .zip(gradient)
        .map(|(l, g)| {
            let d = clamp_displacement([-eta * g[0], -eta * g[1]], cap);
            [l[0] + d[0], l[1] + d[1]]
        })
        .collect()
}

/// Runs the full optimization and returns every frame.
pub fn run_sli<F: Float>(model: &SketchClassifier<F>, sketch: &Sketch, config: &SliConfig) -> Result<Trajectory> {
    run_sli_with(model, sketch, config, |_| ControlFlow::Continue(()))
}

/// As [`run_sli`], calling `on_frame` after each recorded frame; returning
/// `Break` ends the run early with the frames recorded so far.
pub fn run_sli_with<F: Float>(
    model: &SketchClassifier<F>,
    sketch: &Sketch,
    config: &SliConfig,
    mut on_frame: impl FnMut(&Frame) -> ControlFlow<()>,
) -> Result<Trajectory> {
    config.validate()?;
    sketch.validate(Some(model.config.num_classes))?;
    let original = match sketch.label {
        Some(l) => l,
        None => model.classify_sketch(sketch)?.predicted(),
    };
    let target = match (config.task, config.target) {
        (TaskKind::Recovery, t) => t.unwrap_or(original),
        (_, Some(t)) if t == original => {
            return Err(Error::invalid(
                "config.target",
                "transfer target must differ from the original label",
            ))
        }
        (_, Some(t)) => t,
        (_, None) => return Err(Error::invalid("config.target", "transfer needs a target class")),
    };
    if target >= model.config.num_classes {
        return Err(Error::invalid("config.target", format!("class {target} out of range")));
    }
    // shapes come from the untouched sketch so they stay bit-identical;
    // recovery only swaps in fresh locations, drawn as `relocate` does
    let mut input = model.input(sketch);
    if config.task == TaskKind::Recovery {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let real = sketch.strokes.iter().filter(|s| !s.is_empty()).count();
        for (s, l) in input.strokes.iter_mut().zip(initial_locations(real, config.init, &mut rng)) {
            s.location = [F::from_f64(l.x).unwrap(), F::from_f64(l.y).unwrap()];
        }
    }
    let lambda = if config.task == TaskKind::Counterfactual {
        config.lambda
    } else {
        0.0
    };
    let mut problem = SliProblem::new(model, &input, original, target, lambda)?;
    let header = TrajectoryHeader {
        format: TRAJECTORY_FORMAT.to_owned(),
        original_label: original,
        target_label: target,
        categories: model.categories.clone(),
        config: config.clone(),
        seed: config.seed,
        strokes: input
            .strokes
            .iter()
            .map(|s| StrokeShape {
                order: s.order,
                shape: s.shape.iter().map(|v| v.map(|x| x.to_f64().unwrap())).collect(),
            })
            .collect(),
    };
    let mut locations = problem.initial.clone();
    let mut frames = Vec::with_capacity(config.steps + 1);
    for t in 0..=config.steps {
        let eval = problem.evaluate(&locations)?;
        let frame = Frame {
            t,
            locations: locations.clone(),
            p_orig: eval.scores.probabilities[original],
            p_target: eval.scores.probabilities[target],
            loss: eval.loss,
        };
        let stop = on_frame(&frame).is_break()
            || config.stop_at_confidence.is_some_and(|c| frame.p_target >= c);
        frames.push(frame);
        if stop || t == config.steps {
            break;
        }
        let eta = cosine_step_size(t, config.steps, config.lr_max, config.lr_min);
        locations = apply_step(&locations, &eval.gradient, eta, config.max_move);
    }
    Ok(Trajectory { header, frames })
}
