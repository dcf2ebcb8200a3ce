//! Window samples: per-window z-scoring, mask reset, cyclical calendar
//! encoding and the inverse transform.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::FeatureError;
use crate::ingest::DailyDemandSeries;

/// Guard on the window standard deviation.
pub const STD_EPS: f64 = 1e-8;

/// Per-step missingness indicator; `true` means the step is treated as missing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn observed(len: usize) -> Self {
        Mask(vec![false; len])
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; len];
        for &i in indices {
            bits[i] = true;
        }
        Mask(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalendarFeatures {
    /// 0 = Monday.
    pub day_of_week: u32,
    pub day_of_month: u32,
    pub month: u32,
}

impl CalendarFeatures {
    pub fn from_date(date: NaiveDate) -> Self {
        CalendarFeatures {
            day_of_week: date.weekday().num_days_from_monday(),
            day_of_month: date.day(),
            month: date.month(),
        }
    }
}

/// `[sin_dow, sin_dom, sin_month, cos_dow, cos_dom, cos_month]` with zero-based
/// phases and periods 7, 31 and 12.
pub fn cyclical_encode(c: CalendarFeatures) -> [f64; 6] {
    let phases = [
        (c.day_of_week as f64, 7.0),
        ((c.day_of_month - 1) as f64, 31.0),
        ((c.month - 1) as f64, 12.0),
    ];
    let mut out = [0.0; 6];
    for (i, (k, period)) in phases.into_iter().enumerate() {
        let angle = 2.0 * PI * k / period;
        out[i] = angle.sin();
        out[i + 3] = angle.cos();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub demand_norm: Vec<f64>,
    pub demand_masked_norm: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Z-scores a window after zero-filling masked entries. Statistics cover all
/// entries of the zero-filled window (population std), and masked positions
/// are reset to 0 in `demand_masked_norm`.
pub fn normalize_window(raw: &[f64], mask: &Mask) -> Result<Normalized, FeatureError> {
    if raw.len() < 2 {
        return Err(FeatureError::WindowTooShort(raw.len()));
    }
    if raw.len() != mask.len() {
        return Err(FeatureError::LengthMismatch {
            window: raw.len(),
            mask: mask.len(),
        });
    }
    if mask.count() == mask.len() {
        return Err(FeatureError::AllMasked);
    }
    let filled: Vec<f64> = raw
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect();
    let n = filled.len() as f64;
    let mean = filled.iter().sum::<f64>() / n;
    let std = (filled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = std.max(STD_EPS);
    // Normalized values use the raw demand, so ground truth at masked steps is
    // expressed in the same frame as the observed steps.
    let demand_norm: Vec<f64> = raw.iter().map(|v| (v - mean) / scale).collect();
    let demand_masked_norm = demand_norm
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { 0.0 } else { v })
        .collect();
    Ok(Normalized {
        demand_norm,
        demand_masked_norm,
        mean,
        std,
    })
}

pub fn denormalize(values: &[f64], mean: f64, std: f64) -> Vec<f64> {
    let scale = std.max(STD_EPS);
    values.iter().map(|v| v * scale + mean).collect()
}

/// Normalized and original-scale values at the masked steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub indices: Vec<usize>,
    pub norm: Vec<f64>,
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub station_id: String,
    pub anchor: NaiveDate,
    pub demand_raw: Vec<f64>,
    pub mask: Mask,
    pub demand_norm: Vec<f64>,
    pub demand_masked_norm: Vec<f64>,
    pub calendar: CalendarFeatures,
    pub calendar_encoded: [f64; 6],
    pub norm_mean: f64,
    pub norm_std: f64,
    pub truth: GroundTruth,
}

impl WindowSample {
    pub fn new(
        station_id: &str,
        anchor: NaiveDate,
        demand_raw: Vec<f64>,
        mask: Mask,
    ) -> Result<Self, FeatureError> {
        let n = normalize_window(&demand_raw, &mask)?;
        let indices = mask.indices();
        let truth = GroundTruth {
            norm: indices.iter().map(|&i| n.demand_norm[i]).collect(),
            raw: indices.iter().map(|&i| demand_raw[i]).collect(),
            indices,
        };
        let calendar = CalendarFeatures::from_date(anchor);
        Ok(WindowSample {
            station_id: station_id.to_string(),
            anchor,
            demand_raw,
            mask,
            demand_norm: n.demand_norm,
            demand_masked_norm: n.demand_masked_norm,
            calendar,
            calendar_encoded: cyclical_encode(calendar),
            norm_mean: n.mean,
            norm_std: n.std,
            truth,
        })
    }

    pub fn len(&self) -> usize {
        self.demand_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand_raw.is_empty()
    }

    /// Date of step `i` (step `len - 1` is the anchor).
    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.anchor - chrono::Days::new((self.len() - 1 - i) as u64)
    }
}

/// An `L`-day slice of a series ending at `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawWindow {
    pub station_id: String,
    pub anchor: NaiveDate,
    /// Index of the anchor day within the source series.
    pub anchor_index: usize,
    pub values: Vec<f64>,
    pub real_missing: Mask,
    /// Fully observed windows are eligible for supervised train/test sets.
    pub curated: bool,
}

pub fn extract_windows(series: &DailyDemandSeries, len: usize) -> Result<Vec<RawWindow>, FeatureError> {
    if len < 2 {
        return Err(FeatureError::WindowTooShort(len));
    }
    if series.len() < len {
        return Ok(Vec::new());
    }
    Ok((len - 1..series.len())
        .map(|t| {
            let range = t + 1 - len..=t;
            let missing = series.missing[range.clone()].to_vec();
            let curated = !missing.iter().any(|&m| m);
            RawWindow {
                station_id: series.station_id.clone(),
                anchor: series.date(t),
                anchor_index: t,
                values: series.demand[range].to_vec(),
                real_missing: Mask::new(missing),
                curated,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent two-pass statistics used as an oracle.
    fn oracle_mean_std(xs: &[f64]) -> (f64, f64) {
        let mut sum = 0.0;
        for x in xs {
            sum += x;
        }
        let mean = sum / xs.len() as f64;
        let mut ss = 0.0;
        for x in xs {
            ss += (x - mean) * (x - mean);
        }
        (mean, (ss / xs.len() as f64).sqrt())
    }

    #[test]
    fn constant_window_is_guarded() {
        let n = normalize_window(&[2.0; 7], &Mask::observed(7)).unwrap();
        assert_eq!(n.std, 0.0);
        assert!(n.demand_norm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spike_window_matches_oracle() {
        let raw = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 14.0];
        let n = normalize_window(&raw, &Mask::observed(7)).unwrap();
        let (m, s) = oracle_mean_std(&raw);
        assert!((n.mean - 2.0).abs() < 1e-12 && (n.mean - m).abs() < 1e-12);
        assert!((n.std - 24f64.sqrt()).abs() < 1e-12 && (n.std - s).abs() < 1e-12);
        assert!((n.std - 4.89898).abs() < 1e-5);
        assert!((n.demand_norm[6] - 2.44949).abs() < 1e-5);
        let back = denormalize(&[n.demand_norm[6]], n.mean, n.std);
        assert!((back[0] - 14.0).abs() < 1e-9);
        let back = denormalize(&[2.44949], 2.0, 4.89898);
        assert!((back[0] - 14.0).abs() < 1e-4);
    }

    #[test]
    fn masked_entries_are_zero_filled_and_reset() {
        let raw = [3.0, 5.0, 7.0, 100.0, 4.0, 6.0, 8.0];
        let mask = Mask::from_indices(7, &[3]);
        let n = normalize_window(&raw, &mask).unwrap();
        assert_eq!(n.demand_masked_norm[3], 0.0);
        let (m, s) = oracle_mean_std(&[3.0, 5.0, 7.0, 0.0, 4.0, 6.0, 8.0]);
        assert!((n.mean - m).abs() < 1e-12 && (n.std - s).abs() < 1e-12);
    }

    #[test]
    fn normalization_errors() {
        assert!(matches!(
            normalize_window(&[1.0, 2.0], &Mask::from_indices(2, &[0, 1])),
            Err(FeatureError::AllMasked)
        ));
        assert!(matches!(
            normalize_window(&[1.0], &Mask::observed(1)),
            Err(FeatureError::WindowTooShort(1))
        ));
    }

    #[test]
    fn denormalize_zeros_give_mean() {
        assert_eq!(denormalize(&[0.0, 0.0], 3.5, 2.0), vec![3.5, 3.5]);
    }

    #[test]
    fn calendar_encoding_values() {
        let e = cyclical_encode(CalendarFeatures {
            day_of_week: 0,
            day_of_month: 1,
            month: 12,
        });
        assert_eq!((e[0], e[3]), (0.0, 1.0));
        assert_eq!((e[1], e[4]), (0.0, 1.0));
        assert!((e[2] + 0.5).abs() < 1e-12);
        assert!((e[5] - 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    fn series(missing_days: &[usize], len: usize) -> DailyDemandSeries {
        let start: NaiveDate = "2020-01-01".parse().unwrap();
        DailyDemandSeries {
            station_id: "S1".into(),
            start_date: start,
            end_date: start + chrono::Days::new(len as u64 - 1),
            demand: (0..len).map(|i| i as f64).collect(),
            missing: (0..len).map(|i| missing_days.contains(&i)).collect(),
        }
    }

    #[test]
    fn window_extraction_counts_and_curation() {
        assert_eq!(extract_windows(&series(&[], 10), 7).unwrap().len(), 4);
        assert!(extract_windows(&series(&[], 6), 7).unwrap().is_empty());
        let w = extract_windows(&series(&[5], 14), 7).unwrap();
        for win in &w {
            let covers = win.anchor_index >= 5 && win.anchor_index < 12;
            assert_eq!(win.curated, !covers, "anchor {}", win.anchor_index);
        }
    }

    #[test]
    fn sample_ground_truth_matches_mask() {
        let raw = vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0];
        let s = WindowSample::new("S1", "2020-01-07".parse().unwrap(), raw, Mask::from_indices(7, &[1, 4])).unwrap();
        assert_eq!(s.truth.indices, vec![1, 4]);
        assert_eq!(s.truth.raw, vec![6.0, 9.0]);
        let back = denormalize(&s.truth.norm, s.norm_mean, s.norm_std);
        assert!((back[0] - 6.0).abs() < 1e-9 && (back[1] - 9.0).abs() < 1e-9);
        assert_eq!(s.date_at(6), s.anchor);
        assert_eq!(s.date_at(0), "2020-01-01".parse::<NaiveDate>().unwrap());
    }

    proptest! {
        #[test]
        fn affine_invariance(xs in proptest::collection::vec(0.0f64..100.0, 7), a in 0.1f64..10.0, b in -50.0f64..50.0) {
            let mask = Mask::observed(7);
            let base = normalize_window(&xs, &mask).unwrap();
            prop_assume!(base.std > 1e-3);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let other = normalize_window(&scaled, &mask).unwrap();
            for (p, q) in base.demand_norm.iter().zip(&other.demand_norm) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn round_trip_identity(xs in proptest::collection::vec(0.0f64..100.0, 2..20)) {
            let mask = Mask::observed(xs.len());
            let n = normalize_window(&xs, &mask).unwrap();
            prop_assume!(n.std > STD_EPS);
            let back = denormalize(&n.demand_norm, n.mean, n.std);
            for (x, y) in xs.iter().zip(&back) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn calendar_components_on_unit_circle(dow in 0u32..7, dom in 1u32..=31, month in 1u32..=12) {
            let e = cyclical_encode(CalendarFeatures { day_of_week: dow, day_of_month: dom, month });
            for i in 0..3 {
                prop_assert!((e[i] * e[i] + e[i + 3] * e[i + 3] - 1.0).abs() < 1e-12);
            }
            prop_assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn ground_truth_size_is_popcount(bits in proptest::collection::vec(any::<bool>(), 7)) {
            prop_assume!(bits.iter().any(|b| !b));
            let mask = Mask::new(bits);
            let s = WindowSample::new("S", "2020-02-02".parse().unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], mask.clone()).unwrap();
            prop_assert_eq!(s.truth.indices.len(), mask.count());
            for i in mask.indices() {
                prop_assert_eq!(s.demand_masked_norm[i], 0.0);
            }
        }
    }
}
