//! The stroke-decomposed transformer classifier.
//!
//! Each stroke token is the sum of three branch embeddings: a
//! bidirectional LSTM over the stroke's shape sequence, an affine map of
//! its location and a learned table row for its drawing order. A learned
//! classification token is prepended and the encoder output at that
//! position feeds a linear class head.

pub mod checkpoint;
pub mod config;
mod encoder;
pub mod layers;
mod lstm;
pub mod params;
pub mod train;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use config::{Ablation, ModelConfig};
pub use params::{Layout, Params};

use crate::error::{Error, Result};
use crate::repr::{decompose, DecomposedStroke, PenState, TokenizedSketch};
use crate::sketch::Sketch;
use encoder::Packing;

/// Scalar type the model can run in: `f32` for training and serving,
/// `f64` for gradient checks.
pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Float for f32 {}
impl Float for f64 {}

fn to_f<F: Float>(x: f64) -> F {
    F::from_f64(x).expect("representable")
}

/// Logits and their softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl ClassScores {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        ClassScores {
            probabilities: exps.iter().map(|e| e / z).collect(),
            logits,
        }
    }

    pub fn predicted(&self) -> usize {
        self.probabilities
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }

    /// Cross-entropy `-log p[label]`, evaluated from the logits.
    pub fn loss(&self, label: usize) -> f64 {
        let m = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + self.logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
        lse - self.logits[label]
    }
}

/// One stroke ready for the model: real shape points only.
#[derive(Clone, Debug, PartialEq)]
pub struct StrokeInput<F> {
    pub shape: Vec<[F; 4]>,
    pub location: [F; 2],
    pub order: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchInput<F> {
    pub strokes: Vec<StrokeInput<F>>,
}

impl<F: Float> SketchInput<F> {
    /// Same truncation rules as [`crate::repr::tokenize`], without padding.
    pub fn from_decomposed(strokes: &[DecomposedStroke], config: &ModelConfig) -> Self {
        let strokes = strokes
            .iter()
            .take(config.max_strokes)
            .filter(|d| d.real_len() > 0)
            .map(|d| {
                let n = d.real_len().min(config.max_points);
                let mut shape: Vec<[F; 4]> = d.shape[..n]
                    .iter()
                    .map(|p| p.to_vec4().map(to_f))
                    .collect();
                let [p1, p2] = PenState::End.bits();
                shape[n - 1][2] = to_f(p1);
                shape[n - 1][3] = to_f(p2);
                StrokeInput {
                    shape,
                    location: [to_f(d.location.x), to_f(d.location.y)],
                    order: d.order,
                }
            })
            .collect();
        SketchInput { strokes }
    }

    pub fn from_sketch(sketch: &Sketch, config: &ModelConfig) -> Self {
        Self::from_decomposed(&decompose(sketch), config)
    }

    pub fn from_tokenized(t: &TokenizedSketch) -> Self {
        let strokes = (0..t.max_strokes())
            .filter(|&i| t.stroke_mask[i] && t.point_counts[i] > 0)
            .map(|i| StrokeInput {
                shape: (0..t.point_counts[i])
                    .map(|j| std::array::from_fn(|k| to_f(t.shape_tensor[[i, j, k]])))
                    .collect(),
                location: [to_f(t.location_tensor[[i, 0]]), to_f(t.location_tensor[[i, 1]])],
                order: t.order_ids[i],
            })
            .collect();
        SketchInput { strokes }
    }
}

/// Per-stroke branch inputs of a packed batch, after shape encoding.
#[derive(Clone, Debug)]
pub struct StrokeParts<F> {
    /// `[strokes, d]`; zeros when the shape branch is disabled
    pub shape_emb: Array2<F>,
    /// `[strokes, 2]`
    pub locations: Array2<F>,
    pub orders: Vec<usize>,
    /// strokes per sketch
    pub counts: Vec<usize>,
}

impl<F: Float> StrokeParts<F> {
    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }
}

/// Gradients with respect to the stroke-level inputs.
pub struct InputGrads<F> {
    pub shape_emb: Array2<F>,
    pub locations: Array2<F>,
}

#[derive(Clone, Debug)]
pub struct SketchClassifier<F> {
    pub config: ModelConfig,
    pub categories: Vec<String>,
    pub params: Params<F>,
}

/// Trained single-precision model as stored on disk.
pub type Checkpoint = SketchClassifier<f32>;

impl<F: Float> SketchClassifier<F> {
    pub fn new(config: ModelConfig, categories: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        if categories.len() != config.num_classes {
            return Err(Error::ConfigMismatch(format!(
                "{} categories for {} classes",
                categories.len(),
                config.num_classes
            )));
        }
        let params = Params::init(&config, seed);
        Ok(SketchClassifier {
            config,
            categories,
            params,
        })
    }

    pub fn cast<G: Float>(&self) -> SketchClassifier<G> {
        SketchClassifier {
            config: self.config.clone(),
            categories: self.categories.clone(),
            params: self.params.cast(),
        }
    }

    pub fn category_index(&self, name: &str) -> Result<usize> {
        self.categories
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCategory(name.to_owned()))
    }

    pub fn input(&self, sketch: &Sketch) -> SketchInput<F> {
        SketchInput::from_sketch(sketch, &self.config)
    }

    /// Final forward/backward hidden states of the shape encoder, one row
    /// per sequence. Each sequence must contain at least one point.
    pub fn encode_shapes(&self, shapes: &[&[[F; 4]]]) -> Result<Array2<F>> {
        if let Some(i) = shapes.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("shapes[{i}]"), "stroke has no real points"));
        }
        Ok(self.encode_shapes_unchecked(shapes, false).0)
    }

    fn encode_shapes_unchecked(&self, shapes: &[&[[F; 4]]], keep: bool) -> (Array2<F>, Option<lstm::LstmCache<F>>) {
        let l = &self.params.layout;
        lstm::encode(&self.params, &l.lstm_fwd, &l.lstm_bwd, shapes, keep)
    }

    /// Affine location embedding `l · W + b`.
    pub fn location_embed(&self, locations: ArrayView2<F>) -> Array2<F> {
        let l = &self.params.layout;
        layers::linear(locations, self.params.m(l.loc_w), self.params.v(l.loc_b))
    }

    pub fn order_embed(&self, ids: &[usize]) -> Result<Array2<F>> {
        let table = self.params.m(self.params.layout.order_table);
        let mut out = Array2::zeros((ids.len(), self.config.embed_dim));
        for (r, &id) in ids.iter().enumerate() {
            if id >= self.config.max_strokes {
                return Err(Error::invalid(
                    format!("order_ids[{r}]"),
                    format!("order {id} >= max_strokes {}", self.config.max_strokes),
                ));
            }
            out.row_mut(r).assign(&table.row(id));
        }
        Ok(out)
    }

    /// Shape-encodes a batch of sketches into packed stroke parts.
    pub fn parts(&self, batch: &[&SketchInput<F>]) -> Result<StrokeParts<F>> {
        Ok(self.parts_cached(batch, false)?.0)
    }

    fn parts_cached(
        &self,
        batch: &[&SketchInput<F>],
        keep: bool,
    ) -> Result<(StrokeParts<F>, Option<lstm::LstmCache<F>>)> {
        let strokes: Vec<&StrokeInput<F>> = batch.iter().flat_map(|s| s.strokes.iter()).collect();
        for (b, sk) in batch.iter().enumerate() {
            if sk.strokes.is_empty() {
                return Err(Error::invalid(format!("batch[{b}]"), "sketch has no strokes"));
            }
            if let Some(i) = sk.strokes.iter().position(|s| s.order >= self.config.max_strokes) {
                return Err(Error::invalid(format!("batch[{b}].strokes[{i}].order"), "order id out of range"));
            }
            if let Some(i) = sk.strokes.iter().position(|s| s.shape.is_empty()) {
                return Err(Error::invalid(format!("batch[{b}].strokes[{i}]"), "stroke has no real points"));
            }
        }
        let (shape_emb, cache) = if self.config.use_shape {
            let shapes: Vec<&[[F; 4]]> = strokes.iter().map(|s| s.shape.as_slice()).collect();
            self.encode_shapes_unchecked(&shapes, keep)
        } else {
            (Array2::zeros((strokes.len(), self.config.embed_dim)), None)
        };
        let locations = Array2::from_shape_fn((strokes.len(), 2), |(i, k)| strokes[i].location[k]);
        Ok((
            StrokeParts {
                shape_emb,
                locations,
                orders: strokes.iter().map(|s| s.order).collect(),
                counts: batch.iter().map(|s| s.strokes.len()).collect(),
            },
            cache,
        ))
    }

    fn embed_tokens(&self, parts: &StrokeParts<F>) -> (Array2<F>, Packing) {
        let pack = Packing::from_stroke_counts(&parts.counts);
        let d = self.config.embed_dim;
        let l = &self.params.layout;
        let mut strokes = Array2::<F>::zeros((parts.len(), d));
        if self.config.use_shape {
            strokes += &parts.shape_emb;
        }
        if self.config.use_location {
            strokes += &self.location_embed(parts.locations.view());
        }
        if self.config.use_order {
            let table = self.params.m(l.order_table);
            for (mut row, &o) in strokes.rows_mut().into_iter().zip(&parts.orders) {
                row += &table.row(o);
            }
        }
        let cls = self.params.v(l.cls);
        let mut x = Array2::zeros((pack.rows(), d));
        let mut m = 0;
        for (&st, &n) in pack.starts.iter().zip(&parts.counts) {
            x.row_mut(st).assign(&cls);
            x.slice_mut(s![st + 1..st + 1 + n, ..])
                .assign(&strokes.slice(s![m..m + n, ..]));
            m += n;
        }
        (x, pack)
    }

    fn tokens_backward(
        &self,
        parts: &StrokeParts<F>,
        pack: &Packing,
        dx: &Array2<F>,
        mut grads: Option<&mut Params<F>>,
    ) -> InputGrads<F> {
        let l = self.params.layout.clone();
        let mut d_tok = Array2::<F>::zeros((parts.len(), self.config.embed_dim));
        let mut m = 0;
        for (&st, &n) in pack.starts.iter().zip(&parts.counts) {
            d_tok
                .slice_mut(s![m..m + n, ..])
                .assign(&dx.slice(s![st + 1..st + 1 + n, ..]));
            if let Some(g) = grads.as_deref_mut() {
                let mut cls = g.v_mut(l.cls);
                cls += &dx.row(st);
            }
            m += n;
        }
        if self.config.use_order {
            if let Some(g) = grads.as_deref_mut() {
                let mut table = g.m_mut(l.order_table);
                for (row, &o) in d_tok.rows().into_iter().zip(&parts.orders) {
                    let mut t = table.row_mut(o);
                    t += &row;
                }
            }
        }
        let d_loc = if self.config.use_location {
            layers::linear_backward(
                parts.locations.view(),
                self.params.m(l.loc_w),
                d_tok.view(),
                grads.map(|g| g.mat_vec_mut(l.loc_w, l.loc_b)),
                true,
            )
            .unwrap()
        } else {
            Array2::zeros((parts.len(), 2))
        };
        if !self.config.use_shape {
            d_tok.fill(F::zero());
        }
        InputGrads {
            shape_emb: d_tok,
            locations: d_loc,
        }
    }

    /// Class scores for each packed sketch.
    pub fn scores_from_parts(&self, parts: &StrokeParts<F>) -> Vec<ClassScores> {
        let (x, pack) = self.embed_tokens(parts);
        let out = encoder::forward(&self.params, self.config.heads, x, &pack);
        logits_to_scores(&out.logits)
    }

    /// Scores, mean cross-entropy toward `targets` and its gradient with
    /// respect to the stroke-level inputs. Model weights are constants.
    pub fn input_grads(&self, parts: &StrokeParts<F>, targets: &[usize]) -> (Vec<ClassScores>, f64, InputGrads<F>) {
        let (x, pack) = self.embed_tokens(parts);
        let out = encoder::forward(&self.params, self.config.heads, x, &pack);
        let (scores, loss, d_logits) = loss_grad(&out.logits, targets);
        let dx = encoder::backward(&self.params, self.config.heads, &out.cache, &pack, d_logits.view(), None);
        (scores, loss, self.tokens_backward(parts, &pack, &dx, None))
    }

    /// Mean cross-entropy over the batch with parameter gradients
    /// accumulated into `grads`.
    pub fn loss_and_param_grads(
        &self,
        batch: &[&SketchInput<F>],
        labels: &[usize],
        grads: &mut Params<F>,
    ) -> Result<(Vec<ClassScores>, f64)> {
        let (parts, lstm_cache) = self.parts_cached(batch, true)?;
        let (x, pack) = self.embed_tokens(&parts);
        let out = encoder::forward(&self.params, self.config.heads, x, &pack);
        let (scores, loss, d_logits) = loss_grad(&out.logits, labels);
        let dx = encoder::backward(&self.params, self.config.heads, &out.cache, &pack, d_logits.view(), Some(grads));
        let ig = self.tokens_backward(&parts, &pack, &dx, Some(grads));
        if let Some(cache) = lstm_cache {
            let l = self.params.layout.clone();
            lstm::backward(grads, &l.lstm_fwd, &l.lstm_bwd, &self.params, &cache, ig.shape_emb.view());
        }
        Ok((scores, loss))
    }

    pub fn classify(&self, input: &SketchInput<F>) -> Result<ClassScores> {
        let parts = self.parts(&[input])?;
        Ok(self.scores_from_parts(&parts).remove(0))
    }

    pub fn classify_sketch(&self, sketch: &Sketch) -> Result<ClassScores> {
        self.classify(&self.input(sketch))
    }

    pub fn classify_batch(&self, batch: &[&SketchInput<F>]) -> Result<Vec<ClassScores>> {
        let parts = self.parts(batch)?;
        Ok(self.scores_from_parts(&parts))
    }

    fn check_tokenized(&self, t: &TokenizedSketch) -> Result<()> {
        if t.max_strokes() != self.config.max_strokes || t.max_points() != self.config.max_points {
            return Err(Error::ConfigMismatch(format!(
                "tokenized as {}x{}, model expects {}x{}",
                t.max_strokes(),
                t.max_points(),
                self.config.max_strokes,
                self.config.max_points
            )));
        }
        Ok(())
    }

    /// Forward pass over the fixed-size tensor form. Masked slots are
    /// excluded from attention entirely.
    pub fn forward(&self, t: &TokenizedSketch) -> Result<ClassScores> {
        self.check_tokenized(t)?;
        self.classify(&SketchInput::from_tokenized(t))
    }

    /// Forward pass that also returns the head-averaged attention matrix
    /// of every layer, `[1 + strokes, 1 + strokes]`, classification token
    /// first.
    pub fn forward_with_attention(&self, input: &SketchInput<F>) -> Result<(ClassScores, Vec<Array2<f64>>)> {
        self.attention_inner(input, false).map(|(s, maps)| {
            (s, maps.into_iter().map(|mut l| l.remove(0)).collect())
        })
    }

    /// Per-head attention; outer index is the layer.
    pub fn forward_with_head_attention(&self, input: &SketchInput<F>) -> Result<(ClassScores, Vec<Vec<Array2<f64>>>)> {
        self.attention_inner(input, true)
    }

    fn attention_inner(&self, input: &SketchInput<F>, per_head: bool) -> Result<(ClassScores, Vec<Vec<Array2<f64>>>)> {
        let parts = self.parts(&[input])?;
        let (x, pack) = self.embed_tokens(&parts);
        let out = encoder::forward(&self.params, self.config.heads, x, &pack);
        let cast = |a: &Array2<F>| a.mapv(|v| v.to_f64().unwrap());
        let maps = if per_head {
            encoder::attention_maps_per_head(&out.cache, self.config.heads, 0)
                .iter()
                .map(|l| l.iter().map(cast).collect())
                .collect()
        } else {
            encoder::attention_maps(&out.cache, self.config.heads, 0)
                .iter()
                .map(|m| vec![cast(m)])
                .collect()
        };
        Ok((logits_to_scores(&out.logits).remove(0), maps))
    }

    /// Gradient of the cross-entropy toward `target` with respect to every
    /// stroke location of `sketch`. Rows of strokes past `max_strokes` are
    /// zero; with the location branch disabled the gradient is zero.
    pub fn grad_locations(&self, sketch: &Sketch, target: usize) -> Result<Array2<f64>> {
        if target >= self.config.num_classes {
            return Err(Error::invalid("target", format!("class {target} out of range")));
        }
        let input = self.input(sketch);
        let parts = self.parts(&[&input])?;
        let (_, _, g) = self.input_grads(&parts, &[target]);
        let mut out = Array2::zeros((sketch.strokes.len(), 2));
        // input strokes follow sketch order; empty strokes were skipped
        let mut rows = sketch
            .strokes
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(i, _)| i);
        for r in 0..g.locations.nrows() {
            let i = rows.next().expect("row per stroke");
            out[[i, 0]] = g.locations[[r, 0]].to_f64().unwrap();
            out[[i, 1]] = g.locations[[r, 1]].to_f64().unwrap();
        }
        Ok(out)
    }
}

fn logits_to_scores<F: Float>(logits: &Array2<F>) -> Vec<ClassScores> {
    logits
        .rows()
        .into_iter()
        .map(|r| ClassScores::from_logits(r.iter().map(|v| v.to_f64().unwrap()).collect()))
        .collect()
}

/// Softmax cross-entropy averaged over rows: scores, loss and `dL/dlogits`.
fn loss_grad<F: Float>(logits: &Array2<F>, targets: &[usize]) -> (Vec<ClassScores>, f64, Array2<F>) {
    let scores = logits_to_scores(logits);
    let b = targets.len() as f64;
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, (s, &t)) in scores.iter().zip(targets).enumerate() {
        loss += s.loss(t);
        for (j, &p) in s.probabilities.iter().enumerate() {
            let g = (p - if j == t { 1.0 } else { 0.0 }) / b;
            d[[i, j]] = to_f(g);
        }
    }
    (scores, loss / b, d)
}

/// Cosine similarity of two vectors.
pub fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let dot = a.dot(&b);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    dot / (na * nb).max(f64::MIN_POSITIVE)
}
