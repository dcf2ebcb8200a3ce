//! Dense primitives with their backward passes. Matrices are row-major
//! `rows × cols` slices.

use super::params::{LayerNormParams, Linear, Tensor};

pub const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Self-gated activation `x * sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Numerically stable softmax in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = x Wᵀ + b` for `rows` input rows.
pub fn affine(lin: &Linear, x: &[f64], rows: usize) -> Vec<f64> {
    let (out, inp) = (lin.output_dim(), lin.input_dim());
    debug_assert_eq!(x.len(), rows * inp);
    let mut y = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            y.push(dot(&lin.w.data[o * inp..(o + 1) * inp], xr) + lin.b.data[o]);
        }
    }
    y
}

/// Accumulates parameter gradients of [`affine`] into `grad` and, when
/// `need_input` is set, returns `dx`.
pub fn affine_backward(lin: &Linear, x: &[f64], rows: usize, dy: &[f64], grad: &mut Linear, need_input: bool) -> Vec<f64> {
    let (out, inp) = (lin.output_dim(), lin.input_dim());
    for r in 0..rows {
        let xr = &x[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dy[r * out + o];
            if g == 0.0 {
                continue;
            }
            grad.b.data[o] += g;
            let gw = &mut grad.w.data[o * inp..(o + 1) * inp];
            for (w, xv) in gw.iter_mut().zip(xr) {
                *w += g * xv;
            }
        }
    }
    if !need_input {
        return Vec::new();
    }
    let mut dx = vec![0.0; rows * inp];
    for r in 0..rows {
        let dxr = &mut dx[r * inp..(r + 1) * inp];
        for o in 0..out {
            let g = dy[r * out + o];
            if g == 0.0 {
                continue;
            }
            for (d, w) in dxr.iter_mut().zip(&lin.w.data[o * inp..(o + 1) * inp]) {
                *d += g * w;
            }
        }
    }
    dx
}

/// Per-row layer normalization. Returns the output and the cached
/// normalized values and inverse standard deviations.
pub fn layer_norm(p: &LayerNormParams, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = p.gain.len();
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = is;
        for i in 0..d {
            let h = (xr[i] - mean) * is;
            xhat[r * d + i] = h;
            y[r * d + i] = p.gain.data[i] * h + p.bias.data[i];
        }
    }
    (y, xhat, inv_std)
}

pub fn layer_norm_backward(
    p: &LayerNormParams,
    xhat: &[f64],
    inv_std: &[f64],
    dy: &[f64],
    grad: &mut LayerNormParams,
) -> Vec<f64> {
    let d = p.gain.len();
    let rows = inv_std.len();
    let mut dx = vec![0.0; rows * d];
    for r in 0..rows {
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        let mut dh = vec![0.0; d];
        for i in 0..d {
            let g = dy[r * d + i];
            let h = xhat[r * d + i];
            grad.gain.data[i] += g * h;
            grad.bias.data[i] += g;
            dh[i] = g * p.gain.data[i];
            mean_dh += dh[i];
            mean_dh_h += dh[i] * h;
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        for i in 0..d {
            dx[r * d + i] = inv_std[r] * (dh[i] - mean_dh - xhat[r * d + i] * mean_dh_h);
        }
    }
    dx
}

/// Fixed sinusoidal position table, `len × dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            pe[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn tensor_row<'a>(t: &'a Tensor, row: usize) -> &'a [f64] {
    let w = t.shape[1];
    &t.data[row * w..(row + 1) * w]
}
