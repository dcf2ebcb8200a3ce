//! Pre-norm transformer stack with key-column masking and Gaussian heads.

use super::ops::{add_into, affine, affine_backward, layer_norm, layer_norm_backward, silu, silu_grad, softmax_in_place};
use super::params::{LayerParams, Params};
use super::GaussianSequence;
use crate::error::ModelError;

/// Added to attention logits of masked key columns.
pub const MASK_LOGIT: f64 = -1e9;
pub const VAR_MIN: f64 = 1e-6;
pub const VAR_MAX: f64 = 1e3;

#[derive(Debug, Clone)]
struct LayerTrace {
    x_in: Vec<f64>,
    a: Vec<f64>,
    a_hat: Vec<f64>,
    a_inv_std: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × L × L`, row = query step.
    probs: Vec<f64>,
    heads_out: Vec<f64>,
    x_mid: Vec<f64>,
    b: Vec<f64>,
    b_hat: Vec<f64>,
    b_inv_std: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
}

/// Intermediate activations kept for the backward pass and for inspection.
#[derive(Debug, Clone)]
pub struct DecoderTrace {
    len: usize,
    n_heads: usize,
    layers: Vec<LayerTrace>,
    y_hat: Vec<f64>,
    y_inv_std: Vec<f64>,
    y: Vec<f64>,
    raw_logvar: Vec<f64>,
}

impl DecoderTrace {
    /// Post-softmax attention of `head` in `layer`, `L × L` row-major.
    pub fn attention(&self, layer: usize, head: usize) -> &[f64] {
        let l2 = self.len * self.len;
        &self.layers[layer].probs[head * l2..(head + 1) * l2]
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }
}

fn attention_forward(lp: &LayerParams, x: &[f64], mask: &[bool], n_heads: usize) -> LayerTrace {
    let len = mask.len();
    let d = lp.query.output_dim();
    let dh = d / n_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let (a, a_hat, a_inv_std) = layer_norm(&lp.norm_attn, x, len);
    let q = affine(&lp.query, &a, len);
    let k = affine(&lp.key, &a, len);
    let v = affine(&lp.value, &a, len);
    let mut probs = vec![0.0; n_heads * len * len];
    let mut heads_out = vec![0.0; len * d];
    for h in 0..n_heads {
        let off = h * dh;
        for i in 0..len {
            let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
            for j in 0..len {
                let s: f64 = (0..dh).map(|c| q[i * d + off + c] * k[j * d + off + c]).sum();
                row[j] = s * scale + if mask[j] { MASK_LOGIT } else { 0.0 };
            }
            softmax_in_place(row);
            for j in 0..len {
                let p = row[j];
                if p == 0.0 {
                    continue;
                }
                for c in 0..dh {
                    heads_out[i * d + off + c] += p * v[j * d + off + c];
                }
            }
        }
    }
    let attn = affine(&lp.attn_out, &heads_out, len);
    let mut x_mid = x.to_vec();
    add_into(&mut x_mid, &attn);
    let (b, b_hat, b_inv_std) = layer_norm(&lp.norm_ff, &x_mid, len);
    let ff_pre = affine(&lp.ff_in, &b, len);
    let ff_act: Vec<f64> = ff_pre.iter().map(|&v| silu(v)).collect();
    LayerTrace {
        x_in: x.to_vec(),
        a,
        a_hat,
        a_inv_std,
        q,
        k,
        v,
        probs,
        heads_out,
        x_mid,
        b,
        b_hat,
        b_inv_std,
        ff_pre,
        ff_act,
    }
}

pub fn decode(x: &[f64], mask: &[bool], p: &Params, n_heads: usize) -> Result<(GaussianSequence, DecoderTrace), ModelError> {
    let len = mask.len();
    let d = p.lift_w.len();
    if x.len() != len * d {
        return Err(ModelError::Shape {
            what: "decoder input",
            expected: len * d,
            got: x.len(),
        });
    }
    if mask.iter().all(|&m| m) {
        return Err(ModelError::AllMasked);
    }
    let mut h = x.to_vec();
    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let t = attention_forward(lp, &h, mask, n_heads);
        let ff = affine(&lp.ff_out, &t.ff_act, len);
        h = t.x_mid.clone();
        add_into(&mut h, &ff);
        layers.push(t);
    }
    let (y, y_hat, y_inv_std) = layer_norm(&p.norm_out, &h, len);
    let mean = affine(&p.mean_head, &y, len);
    let raw_logvar = affine(&p.logvar_head, &y, len);
    if !mean.iter().chain(&raw_logvar).all(|v| v.is_finite()) {
        return Err(ModelError::NonFinite("decoder output"));
    }
    let variance = raw_logvar.iter().map(|lv| lv.exp().clamp(VAR_MIN, VAR_MAX)).collect();
    Ok((
        GaussianSequence { mean, variance },
        DecoderTrace {
            len,
            n_heads,
            layers,
            y_hat,
            y_inv_std,
            y,
            raw_logvar,
        },
    ))
}

/// Backward of [`decode`] given gradients w.r.t. the mean and the clamped
/// variance. Returns the gradient w.r.t. the decoder input.
pub(crate) fn decode_backward(trace: &DecoderTrace, p: &Params, d_mean: &[f64], d_var: &[f64], grad: &mut Params) -> Vec<f64> {
    let len = trace.len;
    let d = p.lift_w.len();
    let n_heads = trace.n_heads;
    let dh = d / n_heads;
    let scale = 1.0 / (d as f64).sqrt();

    let d_lv: Vec<f64> = trace
        .raw_logvar
        .iter()
        .zip(d_var)
        .map(|(lv, g)| {
            let v = lv.exp();
            if (VAR_MIN..=VAR_MAX).contains(&v) {
                g * v
            } else {
                0.0
            }
        })
        .collect();
    let mut dy = affine_backward(&p.mean_head, &trace.y, len, d_mean, &mut grad.mean_head, true);
    add_into(
        &mut dy,
        &affine_backward(&p.logvar_head, &trace.y, len, &d_lv, &mut grad.logvar_head, true),
    );
    let mut dh_stream = layer_norm_backward(&p.norm_out, &trace.y_hat, &trace.y_inv_std, &dy, &mut grad.norm_out);

    for (li, t) in trace.layers.iter().enumerate().rev() {
        let lp = &p.layers[li];
        let lg = &mut grad.layers[li];
        // Feed-forward residual branch.
        let d_act = affine_backward(&lp.ff_out, &t.ff_act, len, &dh_stream, &mut lg.ff_out, true);
        let d_pre: Vec<f64> = d_act.iter().zip(&t.ff_pre).map(|(g, x)| g * silu_grad(*x)).collect();
        let d_b = affine_backward(&lp.ff_in, &t.b, len, &d_pre, &mut lg.ff_in, true);
        let mut d_mid = dh_stream.clone();
        add_into(&mut d_mid, &layer_norm_backward(&lp.norm_ff, &t.b_hat, &t.b_inv_std, &d_b, &mut lg.norm_ff));

        // Attention residual branch.
        let d_heads = affine_backward(&lp.attn_out, &t.heads_out, len, &d_mid, &mut lg.attn_out, true);
        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        for h in 0..n_heads {
            let off = h * dh;
            for i in 0..len {
                let row = &t.probs[(h * len + i) * len..(h * len + i + 1) * len];
                let dp: Vec<f64> = (0..len)
                    .map(|j| (0..dh).map(|c| d_heads[i * d + off + c] * t.v[j * d + off + c]).sum())
                    .collect();
                let weighted: f64 = row.iter().zip(&dp).map(|(p, g)| p * g).sum();
                for j in 0..len {
                    let pj = row[j];
                    if pj == 0.0 {
                        continue;
                    }
                    let ds = pj * (dp[j] - weighted) * scale;
                    for c in 0..dh {
                        dv[j * d + off + c] += pj * d_heads[i * d + off + c];
                        dq[i * d + off + c] += ds * t.k[j * d + off + c];
                        dk[j * d + off + c] += ds * t.q[i * d + off + c];
                    }
                }
            }
        }
        let mut da = affine_backward(&lp.query, &t.a, len, &dq, &mut lg.query, true);
        add_into(&mut da, &affine_backward(&lp.key, &t.a, len, &dk, &mut lg.key, true));
        add_into(&mut da, &affine_backward(&lp.value, &t.a, len, &dv, &mut lg.value, true));
        let mut d_in = d_mid;
        add_into(
            &mut d_in,
            &layer_norm_backward(&lp.norm_attn, &t.a_hat, &t.a_inv_std, &da, &mut lg.norm_attn),
        );
        debug_assert_eq!(t.x_in.len(), d_in.len());
        dh_stream = d_in;
    }
    dh_stream
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Params, Vec<f64>) {
        let cfg = ModelConfig::tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Params::init(&cfg, &mut rng);
        let x = (0..4 * 8).map(|_| rng.random_range(-2.0..2.0)).collect();
        (p, x)
    }

    #[test]
    fn masked_columns_get_no_attention() {
        let (p, x) = setup(5);
        let mask = [false, true, false, true];
        let (_, trace) = decode(&x, &mask, &p, 2).unwrap();
        for h in 0..2 {
            let a = trace.attention(0, h);
            for i in 0..4 {
                assert_eq!(a[i * 4 + 1], 0.0);
                assert_eq!(a[i * 4 + 3], 0.0);
            }
        }
    }

    #[test]
    fn rows_sum_to_one_and_variance_is_clamped() {
        for seed in 0..20 {
            let (p, x) = setup(seed);
            let (g, trace) = decode(&x, &[false; 4], &p, 2).unwrap();
            for h in 0..2 {
                let a = trace.attention(0, h);
                for i in 0..4 {
                    let s: f64 = a[i * 4..(i + 1) * 4].iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
            assert!(g.variance.iter().all(|v| (VAR_MIN..=VAR_MAX).contains(v)));
        }
    }

    #[test]
    fn all_masked_is_an_error() {
        let (p, x) = setup(0);
        assert!(matches!(decode(&x, &[true; 4], &p, 2), Err(ModelError::AllMasked)));
    }
}
