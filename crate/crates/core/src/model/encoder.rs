//! Pre-norm transformer encoder over `[CLS, stroke_1 .. stroke_n]` token
//! sequences, packed back to back without padding.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::{
    cst, gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows,
    LayerNormCache,
};
use super::params::{BlockSlots, Params};
use super::Float;

/// Token rows of each sketch inside a packed batch.
#[derive(Clone, Debug)]
pub struct Packing {
    /// first row of each sketch (its classification token)
    pub starts: Vec<usize>,
    /// tokens per sketch, `1 + stroke count`
    pub lens: Vec<usize>,
}

impl Packing {
    pub fn from_stroke_counts(counts: &[usize]) -> Self {
        let mut starts = Vec::with_capacity(counts.len());
        let mut row = 0;
        for &n in counts {
            starts.push(row);
            row += n + 1;
        }
        Packing {
            starts,
            lens: counts.iter().map(|n| n + 1).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.lens.iter().sum()
    }
}

struct BlockCache<F> {
    ln1: LayerNormCache<F>,
    a1: Array2<F>,
    qkv: Array2<F>,
    /// per sketch, per head attention probabilities
    probs: Vec<Array2<F>>,
    attn: Array2<F>,
    ln2: LayerNormCache<F>,
    a2: Array2<F>,
    h1: Array2<F>,
    g1: Array2<F>,
}

pub struct EncoderCache<F> {
    blocks: Vec<BlockCache<F>>,
    lnf: LayerNormCache<F>,
    zf: Array2<F>,
}

pub struct EncoderOutput<F> {
    /// `[batch, classes]`
    pub logits: Array2<F>,
    pub cache: EncoderCache<F>,
}

fn attention_forward<F: Float>(
    qkv: &Array2<F>,
    pack: &Packing,
    heads: usize,
) -> (Array2<F>, Vec<Array2<F>>) {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = cst::<F>(1.0 / (dh as f64).sqrt());
    let mut out = Array2::zeros((qkv.nrows(), d));
    let mut probs = Vec::with_capacity(pack.starts.len() * heads);
    for (&st, &len) in pack.starts.iter().zip(&pack.lens) {
        for h in 0..heads {
            let q = qkv.slice(s![st..st + len, h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![st..st + len, d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![st..st + len, 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut p = q.dot(&k.t());
            p.mapv_inplace(|x| x * scale);
            softmax_rows(p.view_mut());
            out.slice_mut(s![st..st + len, h * dh..(h + 1) * dh])
                .assign(&p.dot(&v));
            probs.push(p);
        }
    }
    (out, probs)
}

fn attention_backward<F: Float>(
    qkv: &Array2<F>,
    probs: &[Array2<F>],
    pack: &Packing,
    heads: usize,
    d_out: ArrayView2<F>,
) -> Array2<F> {
    let d = qkv.ncols() / 3;
    let dh = d / heads;
    let scale = cst::<F>(1.0 / (dh as f64).sqrt());
    let mut dqkv = Array2::zeros(qkv.raw_dim());
    for (b, (&st, &len)) in pack.starts.iter().zip(&pack.lens).enumerate() {
        for h in 0..heads {
            let p = &probs[b * heads + h];
            let (qc, kc, vc) = (h * dh, d + h * dh, 2 * d + h * dh);
            let q = qkv.slice(s![st..st + len, qc..qc + dh]);
            let k = qkv.slice(s![st..st + len, kc..kc + dh]);
            let v = qkv.slice(s![st..st + len, vc..vc + dh]);
            let d_o = d_out.slice(s![st..st + len, h * dh..(h + 1) * dh]);
            dqkv.slice_mut(s![st..st + len, vc..vc + dh])
                .assign(&p.t().dot(&d_o));
            let mut ds = d_o.dot(&v.t());
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = row.iter().zip(prow.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
                for (x, &y) in row.iter_mut().zip(prow.iter()) {
                    *x = y * (*x - dot) * scale;
                }
            }
            dqkv.slice_mut(s![st..st + len, qc..qc + dh]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![st..st + len, kc..kc + dh]).assign(&ds.t().dot(&q));
        }
    }
    dqkv
}

fn block_forward<F: Float>(
    p: &Params<F>,
    bs: &BlockSlots,
    x: Array2<F>,
    pack: &Packing,
    heads: usize,
) -> (Array2<F>, BlockCache<F>) {
    let (a1, ln1) = layer_norm(x.view(), p.v(bs.ln1_g), p.v(bs.ln1_b));
    let qkv = linear(a1.view(), p.m(bs.qkv_w), p.v(bs.qkv_b));
    let (attn, probs) = attention_forward(&qkv, pack, heads);
    let x1 = x + linear(attn.view(), p.m(bs.proj_w), p.v(bs.proj_b));
    let (a2, ln2) = layer_norm(x1.view(), p.v(bs.ln2_g), p.v(bs.ln2_b));
    let h1 = linear(a2.view(), p.m(bs.fc1_w), p.v(bs.fc1_b));
    let g1 = h1.mapv(gelu);
    let x2 = &x1 + &linear(g1.view(), p.m(bs.fc2_w), p.v(bs.fc2_b));
    (
        x2,
        BlockCache {
            ln1,
            a1,
            qkv,
            probs,
            attn,
            ln2,
            a2,
            h1,
            g1,
        },
    )
}

fn block_backward<F: Float>(
    p: &Params<F>,
    bs: &BlockSlots,
    c: &BlockCache<F>,
    pack: &Packing,
    heads: usize,
    dx2: Array2<F>,
    mut grads: Option<&mut Params<F>>,
) -> Array2<F> {
    let dg1 = linear_backward(
        c.g1.view(),
        p.m(bs.fc2_w),
        dx2.view(),
        grads.as_deref_mut().map(|g| g.mat_vec_mut(bs.fc2_w, bs.fc2_b)),
        true,
    )
    .unwrap();
    let dh1 = &dg1 * &c.h1.mapv(gelu_grad);
    let da2 = linear_backward(
        c.a2.view(),
        p.m(bs.fc1_w),
        dh1.view(),
        grads.as_deref_mut().map(|g| g.mat_vec_mut(bs.fc1_w, bs.fc1_b)),
        true,
    )
    .unwrap();
    let dx1 = dx2 + layer_norm_backward(&c.ln2, p.v(bs.ln2_g), da2.view(), grads.as_deref_mut().map(|g| g.vec_vec_mut(bs.ln2_g, bs.ln2_b)));
    let dattn = linear_backward(
        c.attn.view(),
        p.m(bs.proj_w),
        dx1.view(),
        grads.as_deref_mut().map(|g| g.mat_vec_mut(bs.proj_w, bs.proj_b)),
        true,
    )
    .unwrap();
    let dqkv = attention_backward(&c.qkv, &c.probs, pack, heads, dattn.view());
    let da1 = linear_backward(
        c.a1.view(),
        p.m(bs.qkv_w),
        dqkv.view(),
        grads.as_deref_mut().map(|g| g.mat_vec_mut(bs.qkv_w, bs.qkv_b)),
        true,
    )
    .unwrap();
    dx1 + layer_norm_backward(&c.ln1, p.v(bs.ln1_g), da1.view(), grads.map(|g| g.vec_vec_mut(bs.ln1_g, bs.ln1_b)))
}

pub fn forward<F: Float>(p: &Params<F>, heads: usize, x: Array2<F>, pack: &Packing) -> EncoderOutput<F> {
    let l = &p.layout;
    let mut x = x;
    let mut blocks = Vec::with_capacity(l.blocks.len());
    for bs in &l.blocks {
        let (y, c) = block_forward(p, bs, x, pack, heads);
        x = y;
        blocks.push(c);
    }
    let cls = x.select(Axis(0), &pack.starts);
    let (zf, lnf) = layer_norm(cls.view(), p.v(l.lnf_g), p.v(l.lnf_b));
    let logits = linear(zf.view(), p.m(l.head_w), p.v(l.head_b));
    EncoderOutput {
        logits,
        cache: EncoderCache { blocks, lnf, zf },
    }
}

/// Gradient of the packed token inputs given `d_logits`; parameter
/// gradients are accumulated into `grads` when present.
pub fn backward<F: Float>(
    p: &Params<F>,
    heads: usize,
    cache: &EncoderCache<F>,
    pack: &Packing,
    d_logits: ArrayView2<F>,
    mut grads: Option<&mut Params<F>>,
) -> Array2<F> {
    let l = &p.layout;
    let dzf = linear_backward(
        cache.zf.view(),
        p.m(l.head_w),
        d_logits,
        grads.as_deref_mut().map(|g| g.mat_vec_mut(l.head_w, l.head_b)),
        true,
    )
    .unwrap();
    let dcls = layer_norm_backward(&cache.lnf, p.v(l.lnf_g), dzf.view(), grads.as_deref_mut().map(|g| g.vec_vec_mut(l.lnf_g, l.lnf_b)));
    let d = p.layout.cls.cols;
    let mut dx = Array2::zeros((pack.rows(), d));
    for (b, &st) in pack.starts.iter().enumerate() {
        dx.row_mut(st).assign(&dcls.row(b));
    }
    for (bs, c) in l.blocks.iter().zip(&cache.blocks).rev() {
        dx = block_backward(p, bs, c, pack, heads, dx, grads.as_deref_mut());
    }
    dx
}

/// Head-averaged attention maps of every layer for packed sketch `b`.
pub fn attention_maps<F: Float>(cache: &EncoderCache<F>, heads: usize, b: usize) -> Vec<Array2<F>> {
    cache
        .blocks
        .iter()
        .map(|c| {
            let mut acc = c.probs[b * heads].clone();
            for h in 1..heads {
                acc += &c.probs[b * heads + h];
            }
            acc.mapv(|v| v / F::from_usize(heads).unwrap())
        })
        .collect()
}

/// Per-head attention maps of every layer for packed sketch `b`.
pub fn attention_maps_per_head<F: Float>(cache: &EncoderCache<F>, heads: usize, b: usize) -> Vec<Vec<Array2<F>>> {
    cache
        .blocks
        .iter()
        .map(|c| c.probs[b * heads..(b + 1) * heads].to_vec())
        .collect()
}
