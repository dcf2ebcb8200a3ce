//! Two-sample distribution comparison of observed and imputed demand.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::EvalError;

/// Similarity threshold on p-values.
pub const SIMILARITY_P: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    /// `None` when the observed mean is zero.
    pub mean_rel_diff: Option<f64>,
    /// `None` when either mean is zero.
    pub cv_diff: Option<f64>,
    pub wasserstein: f64,
    pub ks_stat: f64,
    pub ks_p: f64,
    pub mwu_stat: f64,
    pub mwu_p: f64,
    pub similar_ks: bool,
    pub similar_mwu: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population coefficient of variation.
fn cv(x: &[f64]) -> Option<f64> {
    let m = mean(x);
    if m == 0.0 {
        return None;
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
    Some(var.sqrt() / m)
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Empirical CDF of sorted `s` at `t`.
fn ecdf(s: &[f64], t: f64) -> f64 {
    s.partition_point(|&v| v <= t) as f64 / s.len() as f64
}

/// 1-D Wasserstein-1 distance as the integral of `|F - G|`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let all = sorted(&[a, b].concat());
    let mut total = 0.0;
    for w in all.windows(2) {
        let dx = w[1] - w[0];
        if dx > 0.0 {
            total += (ecdf(&sa, w[0]) - ecdf(&sb, w[0])).abs() * dx;
        }
    }
    Ok(total)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let d = sa
        .iter()
        .chain(&sb)
        .map(|&t| (ecdf(&sa, t) - ecdf(&sb, t)).abs())
        .fold(0.0, f64::max);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let en = (n * m / (n + m)).sqrt();
    Ok((d, kolmogorov_q((en + 0.12 + 0.11 / en) * d)))
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = sign * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Mann-Whitney U of `a` against `b` with the two-sided p-value from the
/// tie-corrected normal approximation (continuity corrected).
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&v| (v, true)).chain(b.iter().map(|&v| (v, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_a += pooled[i..=j].iter().filter(|p| p.1).count() as f64 * mid;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let nf = n as f64;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if !(var > 0.0) {
        return Ok((u, 1.0));
    }
    let z = ((u - n1 * n2 / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    let p = 2.0 * (1.0 - Normal::standard().cdf(z));
    Ok((u, p.clamp(0.0, 1.0)))
}

pub fn dist_compare(observed: &[f64], imputed: &[f64]) -> Result<DistributionReport, EvalError> {
    if observed.is_empty() || imputed.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let mo = mean(observed);
    let mean_rel_diff = (mo != 0.0).then(|| (mean(imputed) - mo) / mo);
    let cv_diff = match (cv(imputed), cv(observed)) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    let (ks_stat, ks_p) = ks_two_sample(observed, imputed)?;
    let (mwu_stat, mwu_p) = mann_whitney(imputed, observed)?;
    Ok(DistributionReport {
        mean_rel_diff,
        cv_diff,
        wasserstein: wasserstein1(observed, imputed)?,
        ks_stat,
        ks_p,
        mwu_stat,
        mwu_p,
        similar_ks: ks_p > SIMILARITY_P,
        similar_mwu: mwu_p > SIMILARITY_P,
    })
}

/// Linear-interpolation quantile of sorted data, `p` in `[0, 1]`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowQq {
    /// Mean per weekday (Monday first); `None` for an empty bucket.
    pub observed_dow: [Option<f64>; 7],
    pub imputed_dow: [Option<f64>; 7],
    /// `(percent, observed quantile, imputed quantile)` for 1..=99.
    pub qq: Vec<(u32, f64, f64)>,
}

fn dow_means(x: &[(NaiveDate, f64)]) -> [Option<f64>; 7] {
    let mut sum = [0.0; 7];
    let mut n = [0usize; 7];
    for (d, v) in x {
        let k = d.weekday().num_days_from_monday() as usize;
        sum[k] += v;
        n[k] += 1;
    }
    std::array::from_fn(|k| (n[k] > 0).then(|| sum[k] / n[k] as f64))
}

pub fn dow_profile_and_qq(observed: &[(NaiveDate, f64)], imputed: &[(NaiveDate, f64)]) -> Result<DowQq, EvalError> {
    if observed.is_empty() || imputed.is_empty() {
        return Err(EvalError::EmptySample);
    }
    let so = sorted(&observed.iter().map(|x| x.1).collect::<Vec<_>>());
    let si = sorted(&imputed.iter().map(|x| x.1).collect::<Vec<_>>());
    Ok(DowQq {
        observed_dow: dow_means(observed),
        imputed_dow: dow_means(imputed),
        qq: (1..=99)
            .map(|p| (p, quantile(&so, p as f64 / 100.0), quantile(&si, p as f64 / 100.0)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use chrono::Days;
    use proptest::prelude::*;

    /// Quantile-function integral: both inverse CDFs are step functions
    /// that change only at multiples of 1/n and 1/m.
    fn w1_quantile_oracle(a: &[f64], b: &[f64]) -> f64 {
        let (sa, sb) = (sorted(a), sorted(b));
        let (n, m) = (sa.len(), sb.len());
        let mut cuts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).chain((0..=m).map(|j| j as f64 / m as f64)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let inv = |s: &[f64], u: f64| s[((u * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        cuts.windows(2)
            .map(|w| {
                let u = 0.5 * (w[0] + w[1]);
                (inv(&sa, u) - inv(&sb, u)).abs() * (w[1] - w[0])
            })
            .sum()
    }

    #[test]
    fn identical_samples_are_similar() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let r = dist_compare(&x, &x).unwrap();
        assert_eq!(r.mean_rel_diff, Some(0.0));
        assert_eq!(r.wasserstein, 0.0);
        assert_eq!(r.ks_stat, 0.0);
        assert!(r.similar_ks && r.similar_mwu);
    }

    #[test]
    fn translation() {
        let x: Vec<f64> = (1..=50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 3.0).collect();
        let r = dist_compare(&x, &y).unwrap();
        assert_abs_diff_eq!(r.mean_rel_diff.unwrap(), 3.0 / 25.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.wasserstein, 3.0, epsilon = 1e-12);
        assert_eq!(dist_compare(&[0.0, 0.0], &[1.0]).unwrap().mean_rel_diff, None);
    }

    #[test]
    fn clearly_different_samples_are_flagged() {
        let x: Vec<f64> = (0..300).map(|i| (i % 17) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 10.0).collect();
        let r = dist_compare(&x, &y).unwrap();
        assert!(!r.similar_ks && !r.similar_mwu);
        assert!(r.ks_p < 1e-6 && r.mwu_p < 1e-6);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // Q(1.0) and Q(1.36) from the Kolmogorov distribution.
        assert_abs_diff_eq!(kolmogorov_q(1.0), 0.269_999_671, epsilon = 1e-6);
        assert_abs_diff_eq!(kolmogorov_q(1.36), 0.049_453, epsilon = 1e-4);
    }

    #[test]
    fn mwu_small_example() {
        // a entirely below b: U = 0.
        let (u, p) = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(u, 0.0);
        // mu = 6, var = 3*4*8/12 = 8, z = 5.5 / sqrt(8)
        let z: f64 = 5.5 / 8f64.sqrt();
        assert_abs_diff_eq!(p, 2.0 * (1.0 - Normal::standard().cdf(z)), epsilon = 1e-12);
    }

    #[test]
    fn qq_and_dow() {
        let d0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(); // Monday
        let obs: Vec<(NaiveDate, f64)> = (0..70)
            .map(|i| (d0 + Days::new(i), 10.0 + 5.0 * (2.0 * std::f64::consts::PI * (i % 7) as f64 / 7.0).sin()))
            .collect();
        let twice: Vec<(NaiveDate, f64)> = obs.iter().map(|&(d, v)| (d, 2.0 * v)).collect();
        let r = dow_profile_and_qq(&obs, &obs).unwrap();
        assert!(r.qq.iter().all(|q| q.1 == q.2));
        let r2 = dow_profile_and_qq(&obs, &twice).unwrap();
        assert!(r2.qq.iter().all(|q| (q.2 - 2.0 * q.1).abs() < 1e-9));
        for k in 0..7 {
            let expected = 10.0 + 5.0 * (2.0 * std::f64::consts::PI * k as f64 / 7.0).sin();
            assert_abs_diff_eq!(r.observed_dow[k].unwrap(), expected, epsilon = 1e-12);
        }
        let sparse = dow_profile_and_qq(&obs[..1], &obs[..1]).unwrap();
        assert!(sparse.observed_dow[1].is_none());
    }

    proptest! {
        #[test]
        fn w1_matches_oracles(a in proptest::collection::vec(-50.0f64..50.0, 1..40),
                              b in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let w = wasserstein1(&a, &b).unwrap();
            prop_assert!((w - w1_quantile_oracle(&a, &b)).abs() < 1e-9);
            if a.len() == b.len() {
                let (sa, sb) = (sorted(&a), sorted(&b));
                let direct = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
                prop_assert!((w - direct).abs() < 1e-9);
            }
        }

        #[test]
        fn w1_is_a_metric(a in proptest::collection::vec(-9.0f64..9.0, 1..20),
                          b in proptest::collection::vec(-9.0f64..9.0, 1..20),
                          c in proptest::collection::vec(-9.0f64..9.0, 1..20)) {
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert_eq!(wasserstein1(&a, &a).unwrap(), 0.0);
            prop_assert!(ab <= wasserstein1(&a, &c).unwrap() + wasserstein1(&c, &b).unwrap() + 1e-9);
        }

        #[test]
        fn ks_in_unit_interval_and_order_free(a in proptest::collection::vec(0.1f64..5.0, 1..30),
                                               b in proptest::collection::vec(0.0f64..5.0, 1..30)) {
            let (d, p) = ks_two_sample(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&p));
            let mut ra = a.clone();
            ra.reverse();
            let (x, y) = (dist_compare(&a, &b).unwrap(), dist_compare(&ra, &b).unwrap());
            prop_assert_eq!((x.ks_stat, x.mwu_stat), (y.ks_stat, y.mwu_stat));
            prop_assert!((x.wasserstein - y.wasserstein).abs() < 1e-9);
            prop_assert!((x.mean_rel_diff.unwrap() - y.mean_rel_diff.unwrap()).abs() < 1e-9);
        }
    }
}
