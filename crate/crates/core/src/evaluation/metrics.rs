//! Point and probabilistic accuracy metrics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::EvalError;
use crate::training::loss::HALF_LN_2PI;

/// Central-interval levels reported by default.
pub const DEFAULT_ALPHAS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];

fn std_normal() -> Normal {
    Normal::standard()
}

/// Mean absolute error over `indices`.
pub fn mae(pred: &[f64], truth: &[f64], indices: &[usize]) -> Result<f64, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::EmptyIndexSet);
    }
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    Ok(indices.iter().map(|&i| (pred[i] - truth[i]).abs()).sum::<f64>() / indices.len() as f64)
}

/// Continuous ranked probability score of `N(mean, std²)` at `x`.
pub fn crps_gaussian(mean: f64, std: f64, x: f64) -> f64 {
    let n = std_normal();
    let z = (x - mean) / std;
    std * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
}

/// Half-width multiplier of the central `alpha` interval.
pub fn interval_z(alpha: f64) -> f64 {
    std_normal().inverse_cdf((1.0 + alpha) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMetrics {
    /// Mean per-step negative log-likelihood (normalized scale).
    pub nll: f64,
    pub crps: f64,
    /// `(alpha, coverage)` pairs.
    pub icp: Vec<(f64, f64)>,
    pub count: usize,
}

pub fn prob_metrics(
    mean: &[f64],
    variance: &[f64],
    truth: &[f64],
    indices: &[usize],
    alphas: &[f64],
) -> Result<ProbMetrics, EvalError> {
    if indices.is_empty() {
        return Err(EvalError::EmptyIndexSet);
    }
    if mean.len() != variance.len() || mean.len() != truth.len() {
        return Err(EvalError::LengthMismatch(mean.len(), truth.len()));
    }
    let mut nll = 0.0;
    let mut crps = 0.0;
    for &i in indices {
        let v = variance[i];
        if !(v > 0.0) {
            return Err(EvalError::NonPositiveVariance(v));
        }
        nll += (truth[i] - mean[i]).powi(2) / (2.0 * v) + 0.5 * v.ln() + HALF_LN_2PI;
        crps += crps_gaussian(mean[i], v.sqrt(), truth[i]);
    }
    let n = indices.len() as f64;
    let icp = alphas
        .iter()
        .map(|&a| {
            let z = interval_z(a);
            let inside = indices
                .iter()
                .filter(|&&i| (truth[i] - mean[i]).abs() <= z * variance[i].sqrt())
                .count();
            (a, inside as f64 / n)
        })
        .collect();
    Ok(ProbMetrics {
        nll: nll / n,
        crps: crps / n,
        icp,
        count: indices.len(),
    })
}

/// Empirical coverage of the central intervals over all entries.
pub fn calibration_curve(mean: &[f64], variance: &[f64], truth: &[f64], alphas: &[f64]) -> Result<Vec<(f64, f64)>, EvalError> {
    let all: Vec<usize> = (0..mean.len()).collect();
    Ok(prob_metrics(mean, variance, truth, &all, alphas)?.icp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_cases() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(mae(&[10.0, 0.0], &[7.0, 5.0], &[0]).unwrap(), 3.0);
        assert!(matches!(mae(&[1.0], &[1.0], &[]), Err(EvalError::EmptyIndexSet)));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..10.0)).collect();
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..10.0)).collect();
        let idx: Vec<usize> = (0..50).step_by(3).collect();
        let mut oracle = 0.0;
        for &i in &idx {
            oracle += if p[i] > t[i] { p[i] - t[i] } else { t[i] - p[i] };
        }
        assert_abs_diff_eq!(mae(&p, &t, &idx).unwrap(), oracle / idx.len() as f64, epsilon = 1e-12);
    }

    #[test]
    fn crps_at_the_mean() {
        assert_abs_diff_eq!(crps_gaussian(0.0, 1.0, 0.0), 0.233695, epsilon = 1e-6);
        assert!(crps_gaussian(3.0, 1e-9, 3.0).abs() < 1e-8);
    }

    #[test]
    fn coverage_edge_cases() {
        let c = calibration_curve(&[0.0; 4], &[1.0; 4], &[0.0, 0.1, -0.1, 0.0], &DEFAULT_ALPHAS).unwrap();
        assert!(c.iter().all(|&(_, v)| v == 1.0));
        let shifted = calibration_curve(&[10.0; 4], &[1.0; 4], &[0.0; 4], &DEFAULT_ALPHAS).unwrap();
        assert!(shifted.iter().all(|&(_, v)| v == 0.0));
        assert!(matches!(
            prob_metrics(&[0.0], &[0.0], &[0.0], &[0], &[0.5]),
            Err(EvalError::NonPositiveVariance(_))
        ));
    }

    #[test]
    fn coverage_is_monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = calibration_curve(&vec![0.0; 500], &vec![1.0; 500], &truth, &DEFAULT_ALPHAS).unwrap();
        assert!(c.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}
