//! Bidirectional LSTM over variable-length stroke shape sequences.
//!
//! Strokes are sorted by length so that the sequences still running at
//! step `t` always form a prefix of the batch; every step is then one
//! GEMM over that prefix. Padding never enters the recurrence.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::sigmoid;
use super::params::{LstmSlots, Params};
use super::Float;

struct Step<F> {
    x: Array2<F>,
    h_prev: Array2<F>,
    c_prev: Array2<F>,
    /// activated gates `[i | f | g | o]`
    gates: Array2<F>,
    tanh_c: Array2<F>,
}

pub struct DirectionCache<F> {
    steps: Vec<Step<F>>,
}

pub struct LstmCache<F> {
    perm: Vec<usize>,
    fwd: DirectionCache<F>,
    bwd: DirectionCache<F>,
}

/// Encodes each sequence into `[h_fwd_final | h_bwd_final]`.
/// Every sequence must have at least one point.
pub fn encode<F: Float>(
    params: &Params<F>,
    fwd: &LstmSlots,
    bwd: &LstmSlots,
    seqs: &[&[[F; 4]]],
    keep_cache: bool,
) -> (Array2<F>, Option<LstmCache<F>>) {
    let hidden = fwd.w_hh.rows;
    let m = seqs.len();
    let mut perm: Vec<usize> = (0..m).collect();
    perm.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
    let lens: Vec<usize> = perm.iter().map(|&i| seqs[i].len()).collect();

    let (hf, cf) = run_direction(params, fwd, seqs, &perm, &lens, false, keep_cache);
    let (hb, cb) = run_direction(params, bwd, seqs, &perm, &lens, true, keep_cache);

    let mut out = Array2::zeros((m, 2 * hidden));
    for (r, &i) in perm.iter().enumerate() {
        out.slice_mut(s![i, ..hidden]).assign(&hf.row(r));
        out.slice_mut(s![i, hidden..]).assign(&hb.row(r));
    }
    let cache = keep_cache.then(|| LstmCache {
        perm,
        fwd: cf.expect("cache"),
        bwd: cb.expect("cache"),
    });
    (out, cache)
}

fn active(lens: &[usize], t: usize) -> usize {
    lens.partition_point(|&l| l > t)
}

fn run_direction<F: Float>(
    params: &Params<F>,
    slots: &LstmSlots,
    seqs: &[&[[F; 4]]],
    perm: &[usize],
    lens: &[usize],
    reverse: bool,
    keep_cache: bool,
) -> (Array2<F>, Option<DirectionCache<F>>) {
    let hidden = slots.w_hh.rows;
    let m = perm.len();
    let w_ih = params.m(slots.w_ih);
    let w_hh = params.m(slots.w_hh);
    let b = params.v(slots.b);
    let mut h = Array2::<F>::zeros((m, hidden));
    let mut c = Array2::<F>::zeros((m, hidden));
    let t_max = lens.first().copied().unwrap_or(0);
    let mut steps = Vec::with_capacity(if keep_cache { t_max } else { 0 });
    for t in 0..t_max {
        let a = active(lens, t);
        let mut x = Array2::<F>::zeros((a, 4));
        for r in 0..a {
            let seq = seqs[perm[r]];
            let j = if reverse { lens[r] - 1 - t } else { t };
            for k in 0..4 {
                x[[r, k]] = seq[j][k];
            }
        }
        let h_prev = h.slice(s![..a, ..]);
        let mut gates = Array2::from_shape_fn((a, 4 * hidden), |(_, j)| b[j]);
        general_mat_mul(F::one(), &x, &w_ih, F::one(), &mut gates);
        general_mat_mul(F::one(), &h_prev, &w_hh, F::one(), &mut gates);
        for mut row in gates.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (2 * hidden..3 * hidden).contains(&j) {
                    v.tanh()
                } else {
                    sigmoid(*v)
                };
            }
        }
        let h_prev = keep_cache.then(|| h.slice(s![..a, ..]).to_owned());
        let c_prev = keep_cache.then(|| c.slice(s![..a, ..]).to_owned());
        let mut tanh_c = Array2::<F>::zeros((a, hidden));
        for r in 0..a {
            for j in 0..hidden {
                let (i_g, f_g, g_g, o_g) = (
                    gates[[r, j]],
                    gates[[r, hidden + j]],
                    gates[[r, 2 * hidden + j]],
                    gates[[r, 3 * hidden + j]],
                );
                let cn = f_g * c[[r, j]] + i_g * g_g;
                let tc = cn.tanh();
                c[[r, j]] = cn;
                h[[r, j]] = o_g * tc;
                tanh_c[[r, j]] = tc;
            }
        }
        if keep_cache {
            steps.push(Step {
                x,
                h_prev: h_prev.unwrap(),
                c_prev: c_prev.unwrap(),
                gates,
                tanh_c,
            });
        }
    }
    (h, keep_cache.then_some(DirectionCache { steps }))
}

/// Backpropagates the gradient of the stroke embeddings into the
/// recurrent weights.
pub fn backward<F: Float>(
    grads: &mut Params<F>,
    fwd: &LstmSlots,
    bwd: &LstmSlots,
    params: &Params<F>,
    cache: &LstmCache<F>,
    d_out: ArrayView2<F>,
) {
    let hidden = fwd.w_hh.rows;
    let dh_f = Array2::from_shape_fn((cache.perm.len(), hidden), |(r, j)| d_out[[cache.perm[r], j]]);
    let dh_b = Array2::from_shape_fn((cache.perm.len(), hidden), |(r, j)| {
        d_out[[cache.perm[r], hidden + j]]
    });
    backward_direction(grads, fwd, params, &cache.fwd, dh_f);
    backward_direction(grads, bwd, params, &cache.bwd, dh_b);
}

fn backward_direction<F: Float>(
    grads: &mut Params<F>,
    slots: &LstmSlots,
    params: &Params<F>,
    cache: &DirectionCache<F>,
    mut dh: Array2<F>,
) {
    let hidden = slots.w_hh.rows;
    let w_hh = params.m(slots.w_hh);
    let mut dc = Array2::<F>::zeros(dh.raw_dim());
    for step in cache.steps.iter().rev() {
        let a = step.x.nrows();
        let mut da = Array2::<F>::zeros((a, 4 * hidden));
        for r in 0..a {
            for j in 0..hidden {
                let (i_g, f_g, g_g, o_g) = (
                    step.gates[[r, j]],
                    step.gates[[r, hidden + j]],
                    step.gates[[r, 2 * hidden + j]],
                    step.gates[[r, 3 * hidden + j]],
                );
                let tc = step.tanh_c[[r, j]];
                let d_h = dh[[r, j]];
                let d_o = d_h * tc;
                let d_c = dc[[r, j]] + d_h * o_g * (F::one() - tc * tc);
                let d_i = d_c * g_g;
                let d_g = d_c * i_g;
                let d_f = d_c * step.c_prev[[r, j]];
                dc[[r, j]] = d_c * f_g;
                da[[r, j]] = d_i * i_g * (F::one() - i_g);
                da[[r, hidden + j]] = d_f * f_g * (F::one() - f_g);
                da[[r, 2 * hidden + j]] = d_g * (F::one() - g_g * g_g);
                da[[r, 3 * hidden + j]] = d_o * o_g * (F::one() - o_g);
            }
        }
        general_mat_mul(F::one(), &step.x.t(), &da, F::one(), &mut grads.m_mut(slots.w_ih));
        general_mat_mul(F::one(), &step.h_prev.t(), &da, F::one(), &mut grads.m_mut(slots.w_hh));
        let db = da.sum_axis(Axis(0));
        let mut gb = grads.v_mut(slots.b);
        gb += &db;
        let dh_prev = da.dot(&w_hh.t());
        dh.slice_mut(s![..a, ..]).assign(&dh_prev);
    }
}
