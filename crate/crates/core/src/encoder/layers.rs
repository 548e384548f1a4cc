//! Forward and backward passes for the transformer building blocks.
//!
//! Every forward function returns whatever its backward needs; backward
//! functions accumulate parameter gradients into caller-provided views and
//! return the gradient with respect to their input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

pub(crate) fn layer_norm(
    x: &Array2<f64>,
    gamma: ArrayView1<f64>,
    beta: ArrayView1<f64>,
) -> (Array2<f64>, LnCache) {
    let (rows, cols) = x.dim();
    let mut xhat = Array2::zeros((rows, cols));
    let mut rstd = Array1::zeros(rows);
    for (r, row) in x.outer_iter().enumerate() {
        let mu = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = inv;
        for (o, v) in xhat.row_mut(r).iter_mut().zip(row.iter()) {
            *o = (v - mu) * inv;
        }
    }
    let y = &xhat * &gamma + beta;
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: ArrayView1<f64>,
    mut dgamma: ArrayViewMut1<f64>,
    mut dbeta: ArrayViewMut1<f64>,
) -> Array2<f64> {
    let cols = dy.ncols() as f64;
    dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    dbeta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &gamma;
    let mut dx = Array2::zeros(dy.dim());
    for r in 0..dy.nrows() {
        let dxh = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_d = dxh.sum() / cols;
        let mean_dx = dxh.dot(&xh) / cols;
        let inv = cache.rstd[r];
        for ((o, d), x) in dx.row_mut(r).iter_mut().zip(dxh.iter()).zip(xh.iter()) {
            *o = inv * (d - mean_d - x * mean_dx);
        }
    }
    dx
}

pub(crate) fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut y = x.dot(&w);
    if let Some(b) = b {
        y += &b;
    }
    y
}

/// `dw` is `None` for frozen weights.
pub(crate) fn linear_backward(
    x: &Array2<f64>,
    w: ArrayView2<f64>,
    dy: &Array2<f64>,
    dw: Option<ArrayViewMut2<f64>>,
    db: Option<ArrayViewMut1<f64>>,
) -> Array2<f64> {
    if let Some(mut dw) = dw {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut dw);
    }
    if let Some(mut db) = db {
        db += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

pub(crate) fn gelu(u: &Array2<f64>) -> Array2<f64> {
    u.mapv(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()))
}

pub(crate) fn gelu_backward(u: &Array2<f64>, dg: &Array2<f64>) -> Array2<f64> {
    let mut du = dg.clone();
    du.zip_mut_with(u, |d, &x| {
        let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
        let deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x);
        *d *= deriv;
    });
    du
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Multi-head self-attention core on packed `[q | k | v]` projections.
/// Returns the concatenated head outputs and each head's attention matrix.
pub(crate) fn attention(qkv: &Array2<f64>, heads: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (tokens, width) = qkv.dim();
    let d = width / 3;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((tokens, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let mut p = q.dot(&k.t());
        p *= scale;
        softmax_rows(&mut p);
        out.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&p.dot(&v));
        probs.push(p);
    }
    (out, probs)
}

pub(crate) fn attention_backward(
    qkv: &Array2<f64>,
    probs: &[Array2<f64>],
    dout: &Array2<f64>,
) -> Array2<f64> {
    let (tokens, width) = qkv.dim();
    let d = width / 3;
    let heads = probs.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dqkv = Array2::zeros((tokens, width));
    for (h, p) in probs.iter().enumerate() {
        let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
        let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
        let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
        let dout_h = dout.slice(s![.., h * dh..(h + 1) * dh]);

        let dp = dout_h.dot(&v.t());
        let dv = p.t().dot(&dout_h);
        let row_dot = (&dp * p).sum_axis(Axis(1));
        let mut ds = dp;
        for (mut row, rd) in ds.outer_iter_mut().zip(row_dot.iter()) {
            row -= *rd;
        }
        ds *= p;
        ds *= scale;
        let dq = ds.dot(&k);
        let dk = ds.t().dot(&q);

        dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
        dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&dk);
        dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
    }
    dqkv
}
