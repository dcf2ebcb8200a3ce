//! Gaussian reconstruction likelihood, KL to the standard normal prior and
//! their weighted sum.

use crate::error::TrainError;

pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Mean negative log-likelihood of `x` under independent Gaussians.
pub fn recon_loss(x: &[f64], mean: &[f64], variance: &[f64]) -> Result<f64, TrainError> {
    if x.is_empty() {
        return Err(TrainError::EmptyTargets);
    }
    let mut total = 0.0;
    for ((x, m), v) in x.iter().zip(mean).zip(variance) {
        if !(*v > 0.0) {
            return Err(TrainError::NonPositiveVariance(*v));
        }
        total += (x - m).powi(2) / (2.0 * v) + 0.5 * v.ln() + HALF_LN_2PI;
    }
    Ok(total / x.len() as f64)
}

/// `KL(N(mean, std²) || N(0, 1))` summed over dimensions.
pub fn kl_loss(mean: &[f64], std: &[f64]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for (m, s) in mean.iter().zip(std) {
        if !(*s > 0.0) {
            return Err(TrainError::NonPositiveScale(*s));
        }
        let var = s * s;
        total += var + m * m - var.ln() - 1.0;
    }
    Ok(0.5 * total)
}

pub fn elbo_loss(recon: f64, kl: f64, theta: f64) -> f64 {
    recon + theta * kl
}
