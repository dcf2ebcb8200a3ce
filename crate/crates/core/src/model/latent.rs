//! Diagonal Gaussian posterior over the latent code.

use super::ops::{affine, affine_backward, all_finite};
use super::params::Linear;
use crate::error::ModelError;

/// Log-variance is clamped to this range before exponentiation.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub mean: Vec<f64>,
    /// Clamped log-variance.
    pub logvar: Vec<f64>,
    pub std: Vec<f64>,
    raw_logvar: Vec<f64>,
}

pub fn encode_latent(fused: &[f64], mean_head: &Linear, logvar_head: &Linear) -> Result<Latent, ModelError> {
    if !all_finite(fused) {
        return Err(ModelError::NonFinite("fused context"));
    }
    if mean_head.input_dim() != fused.len() {
        return Err(ModelError::Shape {
            what: "latent encoder input",
            expected: mean_head.input_dim(),
            got: fused.len(),
        });
    }
    let mean = affine(mean_head, fused, 1);
    let raw_logvar = affine(logvar_head, fused, 1);
    if !all_finite(&mean) || !all_finite(&raw_logvar) {
        return Err(ModelError::NonFinite("latent statistics"));
    }
    let logvar: Vec<f64> = raw_logvar.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    let std = logvar.iter().map(|v| (0.5 * v).exp()).collect();
    Ok(Latent {
        mean,
        logvar,
        std,
        raw_logvar,
    })
}

pub fn sample_latent(mean: &[f64], std: &[f64], eps: &[f64]) -> Vec<f64> {
    mean.iter().zip(std).zip(eps).map(|((m, s), e)| m + s * e).collect()
}

/// Propagates `d_mean` and `d_logvar` (w.r.t. the clamped log-variance) into
/// the heads and returns the gradient w.r.t. the fused input.
pub(crate) fn latent_backward(
    fused: &[f64],
    latent: &Latent,
    d_mean: &[f64],
    d_logvar: &[f64],
    heads: (&Linear, &Linear),
    grads: (&mut Linear, &mut Linear),
) -> Vec<f64> {
    let d_raw: Vec<f64> = d_logvar
        .iter()
        .zip(&latent.raw_logvar)
        .map(|(g, r)| if (LOGVAR_MIN..=LOGVAR_MAX).contains(r) { *g } else { 0.0 })
        .collect();
    let mut dx = affine_backward(heads.0, fused, 1, d_mean, grads.0, true);
    let dx2 = affine_backward(heads.1, fused, 1, &d_raw, grads.1, true);
    for (a, b) in dx.iter_mut().zip(dx2) {
        *a += b;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_heads_give_standard_normal() {
        let l = encode_latent(&[0.5, -1.0, 2.0], &Linear::zeros(3, 2), &Linear::zeros(3, 2)).unwrap();
        assert_eq!(l.mean, vec![0.0, 0.0]);
        assert_eq!(l.std, vec![1.0, 1.0]);
    }

    #[test]
    fn logvar_maps_to_std() {
        let mut lv = Linear::zeros(1, 2);
        lv.b.data[1] = 2.0 * 3f64.ln();
        let l = encode_latent(&[0.0], &Linear::zeros(1, 2), &lv).unwrap();
        assert_abs_diff_eq!(l.std[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reparameterization_arithmetic() {
        assert_eq!(sample_latent(&[1.0, 2.0], &[0.5, 1.0], &[2.0, -1.0]), vec![2.0, 1.0]);
        assert_eq!(sample_latent(&[1.0, 2.0], &[0.5, 1.0], &[0.0, 0.0]), vec![1.0, 2.0]);
        let mut lv = Linear::zeros(1, 1);
        lv.b.data[0] = -1e6;
        let l = encode_latent(&[0.0], &Linear::zeros(1, 1), &lv).unwrap();
        let z = sample_latent(&l.mean, &l.std, &[1.0]);
        assert!(z[0].abs() < 1e-6);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let r = encode_latent(&[f64::NAN], &Linear::zeros(1, 1), &Linear::zeros(1, 1));
        assert!(matches!(r, Err(ModelError::NonFinite(_))));
    }
}
