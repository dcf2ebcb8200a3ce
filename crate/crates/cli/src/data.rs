//! On-disk layout of a series directory and the imputation table.
//!
//! A series directory holds `series.csv`, `stations.csv` and optionally
//! `pois.csv`, all written by `ingest`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chargefill::evaluation::ImputationResult;
use chargefill::ingest::{build_contexts, read_poi_csv, read_series, write_series, DailyDemandSeries, Location, StationContext};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub const SERIES: &str = "series.csv";
pub const STATIONS: &str = "stations.csv";
pub const POIS: &str = "pois.csv";

#[derive(Debug, Serialize, Deserialize)]
struct StationRow {
    station_id: String,
    lat: f64,
    lon: f64,
}

pub struct SeriesDir {
    pub series: Vec<DailyDemandSeries>,
    pub contexts: BTreeMap<String, StationContext>,
    /// Files read, for the manifest.
    pub files: Vec<PathBuf>,
}

pub fn write_locations(path: &Path, locations: &BTreeMap<String, Location>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, loc) in locations {
        w.serialize(StationRow {
            station_id: id.clone(),
            lat: loc.lat,
            lon: loc.lon,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn read_locations(path: &Path) -> Result<BTreeMap<String, Location>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<StationRow>() {
        let row = row?;
        out.insert(row.station_id, Location { lat: row.lat, lon: row.lon });
    }
    Ok(out)
}

pub fn write_series_file(path: &Path, series: &[DailyDemandSeries]) -> Result<()> {
    write_series(File::create(path)?, series)?;
    Ok(())
}

pub fn read_series_file(path: &Path) -> Result<Vec<DailyDemandSeries>> {
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(read_series(file).with_context(|| format!("parsing {}", path.display()))?)
}

pub fn load_series_dir(dir: &Path, radius_km: f64) -> Result<SeriesDir> {
    crate::manifest::warn_if_stale(dir);
    let series_path = dir.join(SERIES);
    let series = read_series_file(&series_path)?;
    let mut files = vec![series_path];
    let stations_path = dir.join(STATIONS);
    let mut locations = if stations_path.exists() {
        files.push(stations_path.clone());
        read_locations(&stations_path)?
    } else {
        BTreeMap::new()
    };
    for s in &series {
        locations.entry(s.station_id.clone()).or_insert_with(|| {
            log::warn!("no coordinates for station {}; using 0, 0", s.station_id);
            Location::default()
        });
    }
    locations.retain(|id, _| series.iter().any(|s| &s.station_id == id));
    let poi_path = dir.join(POIS);
    let raw = if poi_path.exists() {
        files.push(poi_path.clone());
        read_poi_csv(File::open(&poi_path)?)?
    } else {
        BTreeMap::new()
    };
    Ok(SeriesDir {
        series,
        contexts: build_contexts(&raw, &locations, radius_km),
        files,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImputedRow {
    pub station_id: String,
    pub date: NaiveDate,
    /// Empty for a gap no window could reach.
    pub demand_kwh: Option<f64>,
    pub variance: Option<f64>,
    pub was_imputed: bool,
    pub clamped: bool,
}

pub fn write_imputations(path: &Path, results: &[ImputationResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        for d in &r.days {
            w.serialize(ImputedRow {
                station_id: r.station_id.clone(),
                date: d.date,
                demand_kwh: d.value,
                variance: d.variance,
                was_imputed: d.was_imputed,
                clamped: d.clamped,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One scored prediction row. Series files (with a `missing` column) and
/// imputation tables (with `variance` and `was_imputed`) are both accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub station_id: String,
    pub date: NaiveDate,
    pub value: f64,
    pub variance: Option<f64>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).with_context(|| format!("{}: no `{name}` column", path.display()));
    let (c_station, c_date, c_value) = (need("station_id")?, need("date")?, need("demand_kwh")?);
    let (c_var, c_imputed, c_missing) = (col("variance"), col("was_imputed"), col("missing"));
    let flag = |rec: &csv::StringRecord, c: Option<usize>| c.map(|c| matches!(&rec[c], "1" | "true"));
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if flag(&rec, c_imputed) == Some(false) || flag(&rec, c_missing) == Some(true) || rec[c_value].is_empty() {
            continue;
        }
        let line = i + 2;
        let parse = |c: usize, what: &str| -> Result<f64> {
            rec[c].parse().with_context(|| format!("{}:{line}: bad {what}", path.display()))
        };
        out.push(Prediction {
            station_id: rec[c_station].to_string(),
            date: rec[c_date].parse().with_context(|| format!("{}:{line}: bad date", path.display()))?,
            value: parse(c_value, "demand_kwh")?,
            variance: match c_var {
                Some(c) if !rec[c].is_empty() => Some(parse(c, "variance")?),
                _ => None,
            },
        });
    }
    Ok(out)
}
