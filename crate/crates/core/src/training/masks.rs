//! Synthetic missingness: uniform random masks over a window and
//! distribution-matched masks over long series.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::features::Mask;

/// Masking ratios swept during training.
pub const LAMBDA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Proposals per block before placement falls back to an exhaustive scan.
pub const MAX_RETRIES: usize = 1000;

/// `clamp(floor(lambda * len), 1, len - 1)`.
pub fn masked_count(len: usize, lambda: f64) -> usize {
    ((lambda * len as f64).floor() as usize).clamp(1, len - 1)
}

/// Hides exactly [`masked_count`] uniformly chosen steps.
pub fn gen_mask_random<R: Rng + ?Sized>(len: usize, lambda: f64, rng: &mut R) -> Result<Mask, TrainError> {
    if len < 2 {
        return Err(TrainError::WindowTooShort(len));
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(TrainError::Ratio(lambda));
    }
    let n = masked_count(len, lambda);
    let idx = sample(rng, len, n).into_vec();
    Ok(Mask::from_indices(len, &idx))
}

/// Random masks over a long series, one independent window mask per
/// consecutive `window` days (a trailing partial window stays observed).
pub fn gen_mask_random_series<R: Rng + ?Sized>(
    total: usize,
    window: usize,
    lambda: f64,
    rng: &mut R,
) -> Result<Vec<bool>, TrainError> {
    let mut out = vec![false; total];
    for start in (0..total).step_by(window) {
        if start + window > total {
            break;
        }
        let m = gen_mask_random(window, lambda, rng)?;
        out[start..start + window].copy_from_slice(m.bits());
    }
    Ok(out)
}

/// Random window masks whose expected hidden share is `fraction`: each
/// consecutive `window` days hide `floor(f * window)` uniformly chosen days,
/// or one more with probability equal to the fractional part.
pub fn gen_mask_ls_matched<R: Rng + ?Sized>(
    total: usize,
    window: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<Vec<bool>, TrainError> {
    if window < 2 {
        return Err(TrainError::WindowTooShort(window));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Ratio(fraction));
    }
    let expected = fraction * window as f64;
    let base = expected.floor() as usize;
    let extra = expected - base as f64;
    let mut out = vec![false; total];
    for start in (0..total).step_by(window) {
        let len = window.min(total - start);
        let k = (base + usize::from(rng.random::<f64>() < extra)).min(len.saturating_sub(1));
        for i in sample(rng, len, k) {
            out[start + i] = true;
        }
    }
    Ok(out)
}

/// Maximal runs of `true` as `(start, length)`.
pub fn gap_runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let s = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            runs.push((s, i - s));
        } else {
            i += 1;
        }
    }
    runs
}

/// Empirical statistics of real missingness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessProfile {
    pub gap_length_pmf: BTreeMap<usize, f64>,
    /// Gap start frequencies by weekday, Monday first.
    pub dow_weights: [f64; 7],
    /// Gap start frequencies by month, January first.
    pub seasonal_weights: [f64; 12],
    /// Observed-run lengths between consecutive gaps. Empty when no series
    /// had two gaps.
    pub spacing_pmf: BTreeMap<usize, f64>,
    /// Pooled fraction of missing days.
    pub missing_fraction: f64,
}

impl MissingnessProfile {
    pub fn has_spacing(&self) -> bool {
        !self.spacing_pmf.is_empty()
    }
}

fn normalize_counts(counts: BTreeMap<usize, usize>) -> BTreeMap<usize, f64> {
    let total: usize = counts.values().sum();
    counts.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect()
}

/// Fits a profile from `(first date, missing flags)` per series.
pub fn fit_missingness_profile(masks: &[(NaiveDate, &[bool])]) -> Result<MissingnessProfile, TrainError> {
    let mut lengths = BTreeMap::new();
    let mut spacings = BTreeMap::new();
    let mut dow = [0.0; 7];
    let mut month = [0.0; 12];
    let mut missing = 0usize;
    let mut days = 0usize;
    for (start, mask) in masks {
        days += mask.len();
        missing += mask.iter().filter(|&&m| m).count();
        let runs = gap_runs(mask);
        for (i, &(s, len)) in runs.iter().enumerate() {
            *lengths.entry(len).or_insert(0) += 1;
            let date = *start + Days::new(s as u64);
            dow[date.weekday().num_days_from_monday() as usize] += 1.0;
            month[date.month0() as usize] += 1.0;
            if i > 0 {
                let (ps, pl) = runs[i - 1];
                *spacings.entry(s - (ps + pl)).or_insert(0) += 1;
            }
        }
    }
    let n_gaps: usize = lengths.values().sum();
    if n_gaps == 0 {
        return Err(TrainError::NoGaps);
    }
    if spacings.is_empty() {
        log::warn!("missingness profile has no gap-to-gap spacings; placement uses a one-day minimum");
    }
    dow.iter_mut().for_each(|v| *v /= n_gaps as f64);
    month.iter_mut().for_each(|v| *v /= n_gaps as f64);
    Ok(MissingnessProfile {
        gap_length_pmf: normalize_counts(lengths),
        dow_weights: dow,
        seasonal_weights: month,
        spacing_pmf: normalize_counts(spacings),
        missing_fraction: missing as f64 / days.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmMask {
    pub mask: Vec<bool>,
    pub target_days: usize,
    /// Set when fewer days than requested could be placed.
    pub shortfall: bool,
}

impl DmMask {
    pub fn masked_days(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn draw_pmf<R: Rng + ?Sized>(pmf: &BTreeMap<usize, f64>, max: usize, rng: &mut R) -> Option<usize> {
    let support: Vec<(usize, f64)> = pmf.iter().filter(|(&k, _)| k <= max).map(|(&k, &p)| (k, p)).collect();
    if support.is_empty() {
        return None;
    }
    let dist = WeightedIndex::new(support.iter().map(|s| s.1)).ok()?;
    Some(support[dist.sample(rng)].0)
}

/// True when `[s, s+len)` keeps at least `sep` clear days to every gap.
fn fits(gaps: &[(usize, usize)], s: usize, len: usize, sep: usize) -> bool {
    gaps.iter().all(|&(gs, gl)| s >= gs + gl + sep || s + len + sep <= gs)
}

/// Places gap blocks drawn from `profile` over `total` days starting at
/// `start` until `round(target_fraction * total)` days are hidden (within
/// one day).
pub fn gen_mask_dm<R: Rng + ?Sized>(
    profile: &MissingnessProfile,
    total: usize,
    start: NaiveDate,
    target_fraction: f64,
    rng: &mut R,
) -> Result<DmMask, TrainError> {
    if !(target_fraction > 0.0 && target_fraction <= 0.5) {
        return Err(TrainError::Target(target_fraction));
    }
    let target_days = (target_fraction * total as f64).round() as usize;
    let weights: Vec<f64> = (0..total)
        .map(|i| {
            let d = start + Days::new(i as u64);
            profile.dow_weights[d.weekday().num_days_from_monday() as usize]
                * profile.seasonal_weights[d.month0() as usize]
                + 1e-9
        })
        .collect();
    let mut gaps: Vec<(usize, usize)> = Vec::new();
    let mut placed = 0usize;
    let mut shortfall = false;
    while placed < target_days {
        let remaining = target_days - placed;
        let Some(len) = draw_pmf(&profile.gap_length_pmf, remaining + 1, rng) else {
            if remaining <= 1 {
                break;
            }
            return Err(TrainError::Infeasible(format!(
                "no gap length fits the remaining budget of {remaining} days"
            )));
        };
        if len > total {
            return Err(TrainError::Infeasible(format!("gap of {len} days exceeds series length {total}")));
        }
        let sep = if profile.has_spacing() {
            draw_pmf(&profile.spacing_pmf, usize::MAX, rng).unwrap_or(1).max(1)
        } else {
            1
        };
        let proposal = WeightedIndex::new(&weights[..=total - len]).expect("positive weights");
        let mut chosen = None;
        for attempt in 0..MAX_RETRIES {
            let s = proposal.sample(rng);
            let need = if attempt < MAX_RETRIES / 2 { sep } else { 1 };
            if fits(&gaps, s, len, need) {
                chosen = Some(s);
                break;
            }
        }
        if chosen.is_none() {
            let open: Vec<usize> = (0..=total - len).filter(|&s| fits(&gaps, s, len, 1)).collect();
            if !open.is_empty() {
                let w = WeightedIndex::new(open.iter().map(|&s| weights[s])).expect("positive weights");
                chosen = Some(open[w.sample(rng)]);
            }
        }
        match chosen {
            Some(s) => {
                gaps.push((s, len));
                placed += len;
            }
            None if remaining <= 1 => break,
            None if placed == 0 => {
                return Err(TrainError::Infeasible(format!(
                    "cannot place a {len}-day gap in {total} days"
                )))
            }
            None => {
                log::warn!("distribution-matched mask placed {placed} of {target_days} requested days");
                shortfall = true;
                break;
            }
        }
    }
    let mut mask = vec![false; total];
    for (s, l) in gaps {
        mask[s..s + l].iter_mut().for_each(|m| *m = true);
    }
    Ok(DmMask {
        mask,
        target_days,
        shortfall,
    })
}
