//! Flat parameter storage with a typed layout.
//!
//! Every learnable tensor lives in one contiguous buffer; [`Layout`]
//! records where. Gradients and optimizer moments reuse the same layout.

use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ModelConfig;
use super::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
pub struct LstmSlots {
    pub w_ih: Slot,
    pub w_hh: Slot,
    pub b: Slot,
}

#[derive(Clone, Debug)]
pub struct BlockSlots {
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub qkv_w: Slot,
    pub qkv_b: Slot,
    pub proj_w: Slot,
    pub proj_b: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
    pub fc1_w: Slot,
    pub fc1_b: Slot,
    pub fc2_w: Slot,
    pub fc2_b: Slot,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub lstm_fwd: LstmSlots,
    pub lstm_bwd: LstmSlots,
    pub loc_w: Slot,
    pub loc_b: Slot,
    pub order_table: Slot,
    pub cls: Slot,
    pub blocks: Vec<BlockSlots>,
    pub lnf_g: Slot,
    pub lnf_b: Slot,
    pub head_w: Slot,
    pub head_b: Slot,
    /// `(name, slot)` in storage order.
    pub named: Vec<(String, Slot)>,
    pub total: usize,
}

struct Builder {
    named: Vec<(String, Slot)>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Slot {
        let slot = Slot {
            offset: self.total,
            rows,
            cols,
        };
        self.total += rows * cols;
        self.named.push((name.into(), slot));
        slot
    }

    fn lstm(&mut self, prefix: &str, hidden: usize) -> LstmSlots {
        LstmSlots {
            w_ih: self.add(format!("{prefix}.w_ih"), 4, 4 * hidden),
            w_hh: self.add(format!("{prefix}.w_hh"), hidden, 4 * hidden),
            b: self.add(format!("{prefix}.b"), 1, 4 * hidden),
        }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.embed_dim;
        let mut b = Builder {
            named: Vec::new(),
            total: 0,
        };
        let lstm_fwd = b.lstm("shape.fwd", c.lstm_hidden());
        let lstm_bwd = b.lstm("shape.bwd", c.lstm_hidden());
        let loc_w = b.add("location.w", 2, d);
        let loc_b = b.add("location.b", 1, d);
        let order_table = b.add("order.table", c.max_strokes, d);
        let cls = b.add("cls", 1, d);
        let blocks = (0..c.depth)
            .map(|i| {
                let p = format!("blocks.{i}");
                BlockSlots {
                    ln1_g: b.add(format!("{p}.ln1.g"), 1, d),
                    ln1_b: b.add(format!("{p}.ln1.b"), 1, d),
                    qkv_w: b.add(format!("{p}.attn.qkv.w"), d, 3 * d),
                    qkv_b: b.add(format!("{p}.attn.qkv.b"), 1, 3 * d),
                    proj_w: b.add(format!("{p}.attn.proj.w"), d, d),
                    proj_b: b.add(format!("{p}.attn.proj.b"), 1, d),
                    ln2_g: b.add(format!("{p}.ln2.g"), 1, d),
                    ln2_b: b.add(format!("{p}.ln2.b"), 1, d),
                    fc1_w: b.add(format!("{p}.mlp.fc1.w"), d, c.mlp_dim()),
                    fc1_b: b.add(format!("{p}.mlp.fc1.b"), 1, c.mlp_dim()),
                    fc2_w: b.add(format!("{p}.mlp.fc2.w"), c.mlp_dim(), d),
                    fc2_b: b.add(format!("{p}.mlp.fc2.b"), 1, d),
                }
            })
            .collect();
        let lnf_g = b.add("norm.g", 1, d);
        let lnf_b = b.add("norm.b", 1, d);
        let head_w = b.add("head.w", d, c.num_classes);
        let head_b = b.add("head.b", 1, c.num_classes);
        Layout {
            lstm_fwd,
            lstm_bwd,
            loc_w,
            loc_b,
            order_table,
            cls,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            named: b.named,
            total: b.total,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Params<F> {
    pub layout: Arc<Layout>,
    pub data: Vec<F>,
}

impl<F: Float> Params<F> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![F::zero(); layout.total];
        Params { layout, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn m(&self, s: Slot) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((s.rows, s.cols), &self.data[s.range()]).expect("slot shape")
    }

    pub fn m_mut(&mut self, s: Slot) -> ArrayViewMut2<'_, F> {
        ArrayViewMut2::from_shape((s.rows, s.cols), &mut self.data[s.range()]).expect("slot shape")
    }

    pub fn v(&self, s: Slot) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.data[s.range()])
    }

    pub fn v_mut(&mut self, s: Slot) -> ArrayViewMut1<'_, F> {
        ArrayViewMut1::from(&mut self.data[s.range()])
    }

    fn split_two(&mut self, a: Slot, b: Slot) -> (&mut [F], &mut [F]) {
        assert!(a.offset + a.len() <= b.offset, "slots must be ordered and disjoint");
        let (lo, hi) = self.data.split_at_mut(b.offset);
        (&mut lo[a.range()], &mut hi[..b.len()])
    }

    /// Mutable views of a weight matrix and its bias at once.
    pub fn mat_vec_mut(&mut self, w: Slot, b: Slot) -> (ArrayViewMut2<'_, F>, ArrayViewMut1<'_, F>) {
        let (rows, cols) = (w.rows, w.cols);
        let (a, b) = self.split_two(w, b);
        (
            ArrayViewMut2::from_shape((rows, cols), a).expect("slot shape"),
            ArrayViewMut1::from(b),
        )
    }

    pub fn vec_vec_mut(&mut self, a: Slot, b: Slot) -> (ArrayViewMut1<'_, F>, ArrayViewMut1<'_, F>) {
        let (a, b) = self.split_two(a, b);
        (ArrayViewMut1::from(a), ArrayViewMut1::from(b))
    }

    pub fn cast<G: Float>(&self) -> Params<G> {
        Params {
            layout: self.layout.clone(),
            data: self
                .data
                .iter()
                .map(|&x| G::from_f64(x.to_f64().expect("finite")).expect("representable"))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Random initialization: truncated normal (σ = 0.02) for embedding
    /// tables and affine maps, Xavier-uniform input weights and orthogonal
    /// gate blocks for the recurrent encoder, unit-gain layer norms.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let layout = Arc::new(Layout::new(config));
        let mut p = Self::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.lstm_hidden();
        for l in [&layout.lstm_fwd, &layout.lstm_bwd] {
            let bound = (6.0 / (4.0 + h as f64)).sqrt();
            for x in &mut p.data[l.w_ih.range()] {
                *x = F::from_f64(rng.random_range(-bound..bound)).unwrap();
            }
            for gate in 0..4 {
                let q = orthogonal(h, &mut rng);
                let mut w = p.m_mut(l.w_hh);
                for r in 0..h {
                    for c in 0..h {
                        w[[r, gate * h + c]] = F::from_f64(q[r * h + c]).unwrap();
                    }
                }
            }
            // forget-gate bias of one
            let mut b = p.v_mut(l.b);
            for c in h..2 * h {
                b[c] = F::one();
            }
        }
        let mut normal = |s: Slot, p: &mut Params<F>| {
            for x in &mut p.data[s.range()] {
                *x = F::from_f64(trunc_normal(&mut rng, 0.02)).unwrap();
            }
        };
        normal(layout.loc_w, &mut p);
        normal(layout.order_table, &mut p);
        normal(layout.cls, &mut p);
        for b in &layout.blocks {
            normal(b.qkv_w, &mut p);
            normal(b.proj_w, &mut p);
            normal(b.fc1_w, &mut p);
            normal(b.fc2_w, &mut p);
        }
        normal(layout.head_w, &mut p);
        for b in &layout.blocks {
            p.v_mut(b.ln1_g).fill(F::one());
            p.v_mut(b.ln2_g).fill(F::one());
        }
        p.v_mut(layout.lnf_g).fill(F::one());
        p
    }
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Row-major `n × n` orthogonal matrix via Gram–Schmidt on a Gaussian draw.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = (0..n).map(|k| q[i * n + k] * q[j * n + k]).sum();
            for k in 0..n {
                q[i * n + k] -= dot * q[j * n + k];
            }
        }
        let norm = (0..n).map(|k| q[i * n + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..n {
            q[i * n + k] /= norm;
        }
    }
    q
}
