//! How closely a synthetic missingness mask mimics a real one.

use chrono::{Datelike, Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::training::masks::gap_runs;

/// Gap lengths `1..=6` get their own bucket; longer gaps share the last.
pub const GAP_BUCKETS: usize = 7;
const JS_SMOOTHING: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFidelityReport {
    pub gap_wd: f64,
    pub dow_js: f64,
    /// `None` when either indicator series is constant.
    pub lag1_ac_abs_diff: Option<f64>,
}

/// Gap-length PMF over the buckets `1, 2, .., 6, 7+`.
pub fn gap_length_pmf(masks: &[(NaiveDate, &[bool])]) -> Option<[f64; GAP_BUCKETS]> {
    let mut counts = [0usize; GAP_BUCKETS];
    for (_, m) in masks {
        for (_, len) in gap_runs(m) {
            counts[len.min(GAP_BUCKETS) - 1] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    (total > 0).then(|| counts.map(|c| c as f64 / total as f64))
}

/// Share of missing days falling on each weekday, after normalizing by the
/// number of calendar days per weekday.
pub fn dow_missing_profile(masks: &[(NaiveDate, &[bool])]) -> Option<[f64; 7]> {
    let mut miss = [0usize; 7];
    let mut days = [0usize; 7];
    for (start, m) in masks {
        for (i, &b) in m.iter().enumerate() {
            let k = (*start + Days::new(i as u64)).weekday().num_days_from_monday() as usize;
            days[k] += 1;
            miss[k] += b as usize;
        }
    }
    let rate: [f64; 7] = std::array::from_fn(|k| if days[k] == 0 { 0.0 } else { miss[k] as f64 / days[k] as f64 });
    let total: f64 = rate.iter().sum();
    (total > 0.0).then(|| rate.map(|r| r / total))
}

/// Pearson correlation of consecutive indicator pairs, pooled over series.
pub fn lag1_autocorrelation(masks: &[(NaiveDate, &[bool])]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = masks
        .iter()
        .flat_map(|(_, m)| m.windows(2).map(|w| (w[0] as u8 as f64, w[1] as u8 as f64)))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Wasserstein-1 distance between PMFs on consecutive integer support.
pub fn discrete_w1(p: &[f64], q: &[f64]) -> f64 {
    let mut cp = 0.0;
    let mut cq = 0.0;
    let mut total = 0.0;
    for (a, b) in p.iter().zip(q) {
        cp += a;
        cq += b;
        total += (cp - cq).abs();
    }
    total
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let smooth = |v: &[f64]| {
        let s: Vec<f64> = v.iter().map(|x| x + JS_SMOOTHING).collect();
        let t: f64 = s.iter().sum();
        s.into_iter().map(|x| x / t).collect::<Vec<_>>()
    };
    let (p, q) = (smooth(p), smooth(q));
    let kl = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
    let m: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
    (0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).max(0.0)
}

/// Compares two sets of dated masks; `true` marks a missing day.
pub fn mask_fidelity(real: &[(NaiveDate, &[bool])], synth: &[(NaiveDate, &[bool])]) -> Result<MaskFidelityReport, EvalError> {
    let (Some(gr), Some(gs)) = (gap_length_pmf(real), gap_length_pmf(synth)) else {
        return Err(EvalError::EmptySample);
    };
    let (Some(dr), Some(ds)) = (dow_missing_profile(real), dow_missing_profile(synth)) else {
        return Err(EvalError::EmptySample);
    };
    let lag1_ac_abs_diff = match (lag1_autocorrelation(real), lag1_autocorrelation(synth)) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(MaskFidelityReport {
        gap_wd: discrete_w1(&gr, &gs),
        dow_js: js_divergence(&dr, &ds),
        lag1_ac_abs_diff,
    })
}
