//! Dense building blocks with explicit backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

use super::Float;

pub fn cst<F: Float>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

/// `x · w + b`
pub fn linear<F: Float>(x: ArrayView2<F>, w: ArrayView2<F>, b: ArrayView1<F>) -> Array2<F> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Accumulates weight and bias gradients of [`linear`] and returns the
/// input gradient when `want_dx` is set.
pub fn linear_backward<F: Float>(
    x: ArrayView2<F>,
    w: ArrayView2<F>,
    dy: ArrayView2<F>,
    grads: Option<(ArrayViewMut2<F>, ArrayViewMut1<F>)>,
    want_dx: bool,
) -> Option<Array2<F>> {
    if let Some((mut dw, mut db)) = grads {
        general_mat_mul(F::one(), &x.t(), &dy, F::one(), &mut dw);
        db += &dy.sum_axis(Axis(0));
    }
    want_dx.then(|| dy.dot(&w.t()))
}

pub const LN_EPS: f64 = 1e-6;

pub struct LayerNormCache<F> {
    pub xhat: Array2<F>,
    pub rstd: Array1<F>,
}

pub fn layer_norm<F: Float>(
    x: ArrayView2<F>,
    g: ArrayView1<F>,
    b: ArrayView1<F>,
) -> (Array2<F>, LayerNormCache<F>) {
    let n = F::from_usize(x.ncols()).unwrap();
    let eps = cst::<F>(LN_EPS);
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).fold(F::zero(), |a, b| a + b) / n;
        *r = F::one() / (var + eps).sqrt();
        let s = *r;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * &g;
    y += &b;
    (y, LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward<F: Float>(
    cache: &LayerNormCache<F>,
    g: ArrayView1<F>,
    dy: ArrayView2<F>,
    grads: Option<(ArrayViewMut1<F>, ArrayViewMut1<F>)>,
) -> Array2<F> {
    if let Some((mut dg, mut db)) = grads {
        dg += &(&dy * &cache.xhat).sum_axis(Axis(0));
        db += &dy.sum_axis(Axis(0));
    }
    let n = F::from_usize(dy.ncols()).unwrap();
    let mut dx = &dy * &g;
    for ((mut row, xh), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xh.iter()).fold(F::zero(), |a, (&d, &x)| a + d * x) / n;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|d, &x| *d = r * (*d - mean_d - x * mean_dx));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<F: Float>(x: F) -> F {
    let half = cst::<F>(0.5);
    let u = cst::<F>(GELU_C) * (x + cst::<F>(GELU_A) * x * x * x);
    half * x * (F::one() + u.tanh())
}

pub fn gelu_grad<F: Float>(x: F) -> F {
    let half = cst::<F>(0.5);
    let u = cst::<F>(GELU_C) * (x + cst::<F>(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = cst::<F>(GELU_C) * (F::one() + cst::<F>(3.0 * GELU_A) * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * du
}

pub fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Numerically stable softmax of each row, in place.
pub fn softmax_rows<F: Float>(mut x: ArrayViewMut2<F>) {
    for mut row in x.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}
