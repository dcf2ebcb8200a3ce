//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use chargefill::config::Config;
use chargefill::ingest::{DailyDemandSeries, Location, StationContext};
use chargefill::seeds;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 3).unwrap()
}

/// Expected demand of `station` on `date`: a weekly sinusoid with a
/// station-specific level, amplitude and phase.
pub fn weekly_level(station: usize, date: NaiveDate) -> f64 {
    let dow = date.weekday().num_days_from_monday() as f64;
    let level = 15.0 + 8.0 * station as f64;
    let amp = 6.0 + station as f64;
    level + amp * (2.0 * std::f64::consts::PI * (dow + station as f64) / 7.0).sin()
}

/// Fully observed weekly series with Gaussian noise.
pub fn weekly_series(n_stations: usize, days: usize, noise: f64, seed: u64) -> Vec<DailyDemandSeries> {
    let normal = Normal::new(0.0, noise).unwrap();
    (0..n_stations)
        .map(|s| {
            let mut rng = seeds::rng(seed, &format!("synthetic|{s}"));
            let start = start_date();
            let demand = (0..days)
                .map(|t| (weekly_level(s, start + Days::new(t as u64)) + normal.sample(&mut rng)).max(0.0))
                .collect();
            DailyDemandSeries {
                station_id: format!("ST{s:02}"),
                start_date: start,
                end_date: start + Days::new(days as u64 - 1),
                demand,
                missing: vec![false; days],
            }
        })
        .collect()
}

/// Blocky missingness from a two-state process: outages start more often
/// on weekends and persist with probability `stay`.
pub fn blocky_masks(n: usize, days: usize, start_p: f64, stay: f64, seed: u64) -> Vec<Vec<bool>> {
    (0..n)
        .map(|s| {
            let mut rng = seeds::rng(seed, &format!("blocky|{s}"));
            let mut out = vec![false; days];
            let mut on = false;
            for (t, slot) in out.iter_mut().enumerate() {
                let dow = (start_date() + Days::new(t as u64)).weekday().num_days_from_monday();
                let p = if dow >= 5 { 3.0 * start_p } else { start_p };
                on = if on { rng.random::<f64>() < stay } else { rng.random::<f64>() < p };
                *slot = on;
            }
            out
        })
        .collect()
}

/// Hides the days flagged in `masks`; returns the gappy series.
pub fn apply_gaps(series: &[DailyDemandSeries], masks: &[Vec<bool>]) -> Vec<DailyDemandSeries> {
    series
        .iter()
        .zip(masks)
        .map(|(s, m)| {
            let mut g = s.clone();
            for t in 0..g.len() {
                if m[t] {
                    g.missing[t] = true;
                    g.demand[t] = 0.0;
                }
            }
            g
        })
        .collect()
}

pub fn contexts(series: &[DailyDemandSeries]) -> BTreeMap<String, StationContext> {
    series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                s.station_id.clone(),
                StationContext {
                    station_id: s.station_id.clone(),
                    location: Location {
                        lat: 40.0 + 0.01 * i as f64,
                        lon: -105.0 - 0.01 * i as f64,
                    },
                    pois: Vec::new(),
                },
            )
        })
        .collect()
}

/// Small network that trains in minutes on a laptop.
pub fn small_config() -> Config {
    Config::from_toml(
        r#"
seed = 7

[embed]
dim = 64

[model]
d_lat = 16
d_stat = 8
d_cal = 8
d_film = 32
n_layers = 2
n_heads = 4

[train]
learning_rate = 1e-3
batch_size = 32
max_epochs = 60
patience = 8
"#,
    )
    .unwrap()
}
