//! Points of interest around each station.
//!
//! The default source is a local CSV (`station_id,name,category,distance_km`).
//! An optional HTTP geodata endpoint can be queried instead; its answers are
//! written through to the local file so later runs stay offline.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::sessions::Location;
use crate::error::IngestError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub name: String,
    pub category: String,
    pub distance_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationContext {
    pub station_id: String,
    pub location: Location,
    pub pois: Vec<Poi>,
}

#[derive(Debug, Clone)]
pub enum PoiSource {
    Local(PathBuf),
    Remote {
        endpoint: String,
        /// Read when the endpoint is unreachable; refreshed on success.
        cache: Option<PathBuf>,
        retries: u32,
    },
}

#[derive(Deserialize)]
struct PoiRow {
    station_id: String,
    name: String,
    category: String,
    distance_km: f64,
}

/// Reads the local PoI CSV. An empty input yields an empty map.
pub fn read_poi_csv<R: Read>(source: R) -> Result<BTreeMap<String, Vec<Poi>>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let mut out: BTreeMap<String, Vec<Poi>> = BTreeMap::new();
    if reader.headers()?.is_empty() {
        return Ok(out);
    }
    for row in reader.deserialize::<PoiRow>() {
        let row = row?;
        out.entry(row.station_id).or_default().push(Poi {
            name: row.name,
            category: row.category,
            distance_km: row.distance_km,
        });
    }
    Ok(out)
}

pub fn write_poi_csv(path: &Path, pois: &BTreeMap<String, Vec<Poi>>) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["station_id", "name", "category", "distance_km"])?;
    for (station, list) in pois {
        for p in list {
            writer.write_record([
                station.as_str(),
                p.name.as_str(),
                p.category.as_str(),
                &p.distance_km.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Builds per-station context, keeping only PoIs within `radius_km`.
pub fn build_contexts(
    raw: &BTreeMap<String, Vec<Poi>>,
    locations: &BTreeMap<String, Location>,
    radius_km: f64,
) -> BTreeMap<String, StationContext> {
    locations
        .iter()
        .map(|(station, &location)| {
            let mut pois: Vec<Poi> = raw
                .get(station)
                .map(|list| {
                    list.iter()
                        .filter(|p| p.distance_km <= radius_km)
                        .cloned()
                        .collect()
                })
                .unwrap_or_default();
            pois.sort_by(|a, b| {
                a.distance_km
                    .total_cmp(&b.distance_km)
                    .then_with(|| a.name.cmp(&b.name))
            });
            (
                station.clone(),
                StationContext {
                    station_id: station.clone(),
                    location,
                    pois,
                },
            )
        })
        .collect()
}

fn query_remote(
    client: &reqwest::blocking::Client,
    endpoint: &str,
    location: Location,
    radius_km: f64,
    retries: u32,
) -> Result<Vec<Poi>, IngestError> {
    let attempts = retries.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        let response = client
            .get(endpoint)
            .query(&[
                ("lat", location.lat.to_string()),
                ("lon", location.lon.to_string()),
                ("radius_km", radius_km.to_string()),
            ])
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json::<Vec<Poi>>());
        match response {
            Ok(pois) => return Ok(pois),
            Err(e) => {
                last = e.to_string();
                if attempt + 1 < attempts {
                    std::thread::sleep(Duration::from_millis(50 << attempt));
                }
            }
        }
    }
    Err(IngestError::PoiEndpoint {
        endpoint: endpoint.to_string(),
        attempts,
        message: last,
    })
}

/// Loads PoIs for every station in `locations` from `source`.
pub fn load_pois(
    source: &PoiSource,
    locations: &BTreeMap<String, Location>,
    radius_km: f64,
) -> Result<BTreeMap<String, StationContext>, IngestError> {
    match source {
        PoiSource::Local(path) => {
            let raw = read_poi_csv(std::fs::File::open(path)?)?;
            Ok(build_contexts(&raw, locations, radius_km))
        }
        PoiSource::Remote {
            endpoint,
            cache,
            retries,
        } => {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(30))
                .build()
                .map_err(|e| IngestError::PoiEndpoint {
                    endpoint: endpoint.clone(),
                    attempts: 0,
                    message: e.to_string(),
                })?;
            let mut raw = BTreeMap::new();
            let mut failure = None;
            // Requests are issued one at a time.
            for (station, &location) in locations {
                match query_remote(&client, endpoint, location, radius_km, *retries) {
                    Ok(pois) => {
                        raw.insert(station.clone(), pois);
                    }
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
            match (failure, cache) {
                (None, Some(path)) => {
                    write_poi_csv(path, &raw)?;
                    Ok(build_contexts(&raw, locations, radius_km))
                }
                (None, None) => Ok(build_contexts(&raw, locations, radius_km)),
                (Some(e), Some(path)) if path.exists() => {
                    log::warn!("{e}; falling back to {}", path.display());
                    let raw = read_poi_csv(std::fs::File::open(path)?)?;
                    Ok(build_contexts(&raw, locations, radius_km))
                }
                (Some(e), _) => Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn locs() -> BTreeMap<String, Location> {
        let mut m = BTreeMap::new();
        m.insert("S1".to_string(), Location { lat: 37.44, lon: -122.16 });
        m
    }

    #[test]
    fn radius_filter_is_inclusive() {
        let csv = "station_id,name,category,distance_km\nS1,Cafe,food,1.9\nS1,Mall,shop,2.1\nS1,Edge,park,2.0\n";
        let raw = read_poi_csv(csv.as_bytes()).unwrap();
        let ctx = build_contexts(&raw, &locs(), 2.0);
        let names: Vec<_> = ctx["S1"].pois.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["Cafe", "Edge"]);
    }

    #[test]
    fn empty_source_gives_empty_sets() {
        let raw = read_poi_csv("".as_bytes()).unwrap();
        let ctx = build_contexts(&raw, &locs(), 2.0);
        assert!(ctx["S1"].pois.is_empty());
        let raw = read_poi_csv("station_id,name,category,distance_km\n".as_bytes()).unwrap();
        assert!(raw.is_empty());
    }

    #[test]
    fn unreachable_remote_without_cache_errors() {
        let source = PoiSource::Remote {
            endpoint: "http://127.0.0.1:9/pois".into(),
            cache: None,
            retries: 1,
        };
        assert!(matches!(
            load_pois(&source, &locs(), 2.0),
            Err(IngestError::PoiEndpoint { .. })
        ));
    }

    #[test]
    fn unreachable_remote_falls_back_to_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pois.csv");
        std::fs::write(&path, "station_id,name,category,distance_km\nS1,Cafe,food,0.5\n").unwrap();
        let source = PoiSource::Remote {
            endpoint: "http://127.0.0.1:9/pois".into(),
            cache: Some(path),
            retries: 1,
        };
        let ctx = load_pois(&source, &locs(), 2.0).unwrap();
        assert_eq!(ctx["S1"].pois.len(), 1);
    }
}
