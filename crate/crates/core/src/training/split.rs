//! Train/test partitioning of window samples.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::features::WindowSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Seeded shuffle at sample level.
    #[default]
    Random,
    /// Earliest windows of each station go to training.
    Chronological,
}

/// `floor(ratio * n)` clamped so both sides are non-empty.
pub fn train_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).floor() as usize).clamp(1, n - 1)
}

/// Returns `(train, test)` index lists, each in ascending order.
pub fn split_indices(samples: &[WindowSample], ratio: f64, mode: SplitMode, seed: u64) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::Ratio(ratio));
    }
    let n = samples.len();
    if n < 2 {
        return Err(TrainError::TooFewSamples(n));
    }
    let mut train = Vec::new();
    match mode {
        SplitMode::Random => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            train.extend_from_slice(&order[..train_size(n, ratio)]);
        }
        SplitMode::Chronological => {
            let mut by_station: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in samples.iter().enumerate() {
                by_station.entry(&s.station_id).or_default().push(i);
            }
            for idx in by_station.values_mut() {
                idx.sort_by_key(|&i| samples[i].anchor);
                let k = ((ratio * idx.len() as f64).floor() as usize).min(idx.len());
                train.extend_from_slice(&idx[..k]);
            }
            if train.is_empty() || train.len() == n {
                return Err(TrainError::TooFewSamples(n));
            }
        }
    }
    train.sort_unstable();
    let mut is_train = vec![false; n];
    train.iter().for_each(|&i| is_train[i] = true);
    let test = (0..n).filter(|&i| !is_train[i]).collect();
    Ok((train, test))
}

pub fn split_dataset(
    samples: &[WindowSample],
    ratio: f64,
    mode: SplitMode,
    seed: u64,
) -> Result<(Vec<WindowSample>, Vec<WindowSample>), TrainError> {
    let (tr, te) = split_indices(samples, ratio, mode, seed)?;
    Ok((
        tr.into_iter().map(|i| samples[i].clone()).collect(),
        te.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}

/// Indices (into `samples`) of the last `fraction` of each station's
/// samples by anchor date.
pub fn validation_slice(samples: &[WindowSample], fraction: f64) -> Vec<usize> {
    let mut by_station: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_station.entry(&s.station_id).or_default().push(i);
    }
    let mut out = Vec::new();
    for idx in by_station.values_mut() {
        idx.sort_by_key(|&i| samples[i].anchor);
        let k = (fraction * idx.len() as f64).floor() as usize;
        out.extend_from_slice(&idx[idx.len() - k..]);
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Mask;
    use chrono::{Days, NaiveDate};

    fn samples(n: usize, stations: usize) -> Vec<WindowSample> {
        let d0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        (0..n)
            .map(|i| {
                WindowSample::new(
                    &format!("S{}", i % stations),
                    d0 + Days::new(i as u64),
                    vec![1.0, 2.0, 3.0],
                    Mask::from_indices(3, &[1]),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn sizes_follow_floor_rule() {
        let s = samples(100, 1);
        let (tr, te) = split_indices(&s, 0.8, SplitMode::Random, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (80, 20));
        let s3 = samples(3, 1);
        let (tr, te) = split_indices(&s3, 0.5, SplitMode::Random, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 2));
        assert!(matches!(
            split_indices(&s3[..1], 0.5, SplitMode::Random, 1),
            Err(TrainError::TooFewSamples(1))
        ));
    }

    #[test]
    fn seeded_membership_is_stable() {
        let s = samples(50, 2);
        assert_eq!(
            split_indices(&s, 0.8, SplitMode::Random, 9).unwrap(),
            split_indices(&s, 0.8, SplitMode::Random, 9).unwrap()
        );
        assert_ne!(
            split_indices(&s, 0.8, SplitMode::Random, 9).unwrap(),
            split_indices(&s, 0.8, SplitMode::Random, 10).unwrap()
        );
    }

    #[test]
    fn chronological_keeps_early_windows_for_training() {
        let s = samples(20, 2);
        let (tr, te) = split_indices(&s, 0.8, SplitMode::Chronological, 0).unwrap();
        for st in ["S0", "S1"] {
            let last_train = tr.iter().filter(|&&i| s[i].station_id == st).map(|&i| s[i].anchor).max();
            let first_test = te.iter().filter(|&&i| s[i].station_id == st).map(|&i| s[i].anchor).min();
            assert!(last_train < first_test);
        }
    }

    #[test]
    fn validation_takes_latest_per_station() {
        let s = samples(40, 2);
        let v = validation_slice(&s, 0.1);
        assert_eq!(v, vec![36, 37, 38, 39]);
    }
}
