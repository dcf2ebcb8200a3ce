//! Session log parsing and daily aggregation.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::IngestError;

const COLUMNS: [&str; 6] = [
    "station_id",
    "start_time",
    "duration_min",
    "energy_kwh",
    "lat",
    "lon",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChargingSession {
    pub station_id: String,
    pub start_time: DateTime<Utc>,
    pub duration_min: f64,
    pub energy_kwh: f64,
    pub location: Location,
}

impl ChargingSession {
    pub fn start_date(&self) -> NaiveDate {
        self.start_time.date_naive()
    }
}

/// Per-station daily demand. `missing[t]` is true when day `t` has no
/// recorded session.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyDemandSeries {
    pub station_id: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub demand: Vec<f64>,
    pub missing: Vec<bool>,
}

impl DailyDemandSeries {
    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(index as u64)
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.missing.is_empty() {
            return 0.0;
        }
        self.missing.iter().filter(|&&m| m).count() as f64 / self.missing.len() as f64
    }
}

fn field(record: &csv::StringRecord, idx: usize) -> &str {
    record.get(idx).unwrap_or("").trim()
}

fn parse_number(
    record: &csv::StringRecord,
    idx: usize,
    line: u64,
    name: &'static str,
) -> Result<f64, IngestError> {
    let raw = field(record, idx);
    raw.parse::<f64>().map_err(|_| IngestError::Parse {
        line,
        message: format!("{name} `{raw}` is not a number"),
    })
}

/// Parses a session CSV. Exact duplicate rows are dropped with a warning.
pub fn parse_sessions<R: Read>(source: R) -> Result<Vec<ChargingSession>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }

    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut sessions = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let station_id = field(&record, index[0]).to_string();
        if station_id.is_empty() {
            return Err(IngestError::Validation {
                line,
                field: "station_id",
                message: "empty".into(),
            });
        }
        let ts = field(&record, index[1]);
        // RFC 3339 requires an offset, so zone-less timestamps are rejected here.
        let start_time = DateTime::parse_from_rfc3339(ts)
            .map_err(|e| IngestError::Parse {
                line,
                message: format!("start_time `{ts}`: {e}"),
            })?
            .with_timezone(&Utc);
        let duration_min = parse_number(&record, index[2], line, "duration_min")?;
        let energy_kwh = parse_number(&record, index[3], line, "energy_kwh")?;
        let lat = parse_number(&record, index[4], line, "lat")?;
        let lon = parse_number(&record, index[5], line, "lon")?;

        let invalid = |field: &'static str, message: String| IngestError::Validation {
            line,
            field,
            message,
        };
        if !(energy_kwh >= 0.0 && energy_kwh.is_finite()) {
            return Err(invalid("energy_kwh", format!("{energy_kwh} is negative or non-finite")));
        }
        if !(duration_min >= 0.0 && duration_min.is_finite()) {
            return Err(invalid("duration_min", format!("{duration_min} is negative or non-finite")));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(invalid("lat", format!("{lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(invalid("lon", format!("{lon} outside [-180, 180]")));
        }

        let fingerprint: Vec<String> = index.iter().map(|&i| field(&record, i).to_string()).collect();
        if !seen.insert(fingerprint) {
            log::warn!("line {line}: duplicate session row for `{station_id}` dropped");
            continue;
        }
        sessions.push(ChargingSession {
            station_id,
            start_time,
            duration_min,
            energy_kwh,
            location: Location { lat, lon },
        });
    }
    Ok(sessions)
}

/// Writes sessions in the same schema `parse_sessions` reads.
pub fn write_sessions<W: Write>(sink: W, sessions: &[ChargingSession]) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(COLUMNS)?;
    for s in sessions {
        writer.write_record([
            s.station_id.clone(),
            s.start_time.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            s.duration_min.to_string(),
            s.energy_kwh.to_string(),
            s.location.lat.to_string(),
            s.location.lon.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Sums session energy into UTC calendar days over `start..=end`. A session is
/// attributed entirely to the day it starts on. Days without any session get
/// demand 0 and are flagged missing; zero-energy sessions still count as
/// activity.
pub fn aggregate_daily(
    sessions: &[&ChargingSession],
    station_id: &str,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<DailyDemandSeries, IngestError> {
    if end < start {
        return Err(IngestError::EmptyRange {
            start: start.to_string(),
            end: end.to_string(),
        });
    }
    let days = (end - start).num_days() as usize + 1;
    let mut demand = vec![0.0; days];
    let mut missing = vec![true; days];
    for s in sessions {
        if s.station_id != station_id {
            return Err(IngestError::ForeignSession {
                expected: station_id.to_string(),
                found: s.station_id.clone(),
            });
        }
        let date = s.start_date();
        if date < start || date > end {
            continue;
        }
        let t = (date - start).num_days() as usize;
        demand[t] += s.energy_kwh;
        missing[t] = false;
    }
    Ok(DailyDemandSeries {
        station_id: station_id.to_string(),
        start_date: start,
        end_date: end,
        demand,
        missing,
    })
}

/// Groups sessions by station and aggregates each station over the span from
/// its first to its last session day.
pub fn aggregate_all(sessions: &[ChargingSession]) -> Vec<DailyDemandSeries> {
    let mut by_station: BTreeMap<&str, Vec<&ChargingSession>> = BTreeMap::new();
    for s in sessions {
        by_station.entry(s.station_id.as_str()).or_default().push(s);
    }
    by_station
        .into_iter()
        .map(|(station, group)| {
            let start = group.iter().map(|s| s.start_date()).min().expect("non-empty group");
            let end = group.iter().map(|s| s.start_date()).max().expect("non-empty group");
            aggregate_daily(&group, station, start, end).expect("range and station are consistent")
        })
        .collect()
}

/// First recorded coordinates per station.
pub fn station_locations(sessions: &[ChargingSession]) -> BTreeMap<String, Location> {
    let mut out = BTreeMap::new();
    for s in sessions {
        out.entry(s.station_id.clone()).or_insert(s.location);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub threshold: f64,
    pub retained: Vec<String>,
    /// Dropped stations with their missing fraction.
    pub dropped: Vec<(String, f64)>,
}

/// Keeps stations whose missing-day fraction is at most `threshold`; only a
/// strictly larger fraction drops a station.
pub fn filter_stations(series: &[DailyDemandSeries], threshold: f64) -> FilterReport {
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for s in series {
        let frac = s.missing_fraction();
        if frac > threshold {
            dropped.push((s.station_id.clone(), frac));
        } else {
            retained.push(s.station_id.clone());
        }
    }
    FilterReport {
        threshold,
        retained,
        dropped,
    }
}

/// Chance that a `lookback + horizon` sample survives independent random
/// missingness at rate `delta` across a station and `neighbours` others.
pub fn usable_sample_probability(delta: f64, lookback: u32, horizon: u32, neighbours: u32) -> f64 {
    let exponent = (neighbours as f64 + 1.0) * (lookback as f64 + horizon as f64);
    (1.0 - delta).powf(exponent)
}

/// Writes daily series as `station_id,date,demand_kwh,missing`.
pub fn write_series<W: Write>(sink: W, series: &[DailyDemandSeries]) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["station_id", "date", "demand_kwh", "missing"])?;
    for s in series {
        for t in 0..s.len() {
            writer.write_record([
                s.station_id.clone(),
                s.date(t).to_string(),
                s.demand[t].to_string(),
                (s.missing[t] as u8).to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads the series CSV written by [`write_series`]. Rows must be contiguous
/// days per station.
pub fn read_series<R: Read>(source: R) -> Result<Vec<DailyDemandSeries>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let (c_station, c_date, c_demand, c_missing) =
        (col("station_id")?, col("date")?, col("demand_kwh")?, col("missing")?);

    let mut out: Vec<DailyDemandSeries> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let station = field(&record, c_station);
        let date: NaiveDate = field(&record, c_date).parse().map_err(|e| IngestError::Parse {
            line,
            message: format!("date: {e}"),
        })?;
        let demand = parse_number(&record, c_demand, line, "demand_kwh")?;
        let missing = match field(&record, c_missing) {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(IngestError::Parse {
                    line,
                    message: format!("missing flag `{other}`"),
                })
            }
        };
        match out.last_mut() {
            Some(s) if s.station_id == station => {
                let expected = s.end_date + chrono::Days::new(1);
                if date != expected {
                    return Err(IngestError::Parse {
                        line,
                        message: format!("expected date {expected}, found {date}"),
                    });
                }
                s.end_date = date;
                s.demand.push(demand);
                s.missing.push(missing);
            }
            _ => out.push(DailyDemandSeries {
                station_id: station.to_string(),
                start_date: date,
                end_date: date,
                demand: vec![demand],
                missing: vec![missing],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "station_id,start_time,duration_min,energy_kwh,lat,lon\n";

    fn day(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn parses_valid_row() {
        let csv = format!("{HEADER}S1,2019-03-02T10:15:00Z,45,7.2,37.44,-122.16\n");
        let sessions = parse_sessions(csv.as_bytes()).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].station_id, "S1");
        assert_eq!(sessions[0].start_date(), day("2019-03-02"));
        assert_eq!(sessions[0].energy_kwh, 7.2);
        assert_eq!(sessions[0].location, Location { lat: 37.44, lon: -122.16 });
    }

    #[test]
    fn bad_timestamp_reports_line() {
        let csv = format!(
            "{HEADER}S1,2019-03-02T10:15:00Z,45,7.2,37.44,-122.16\nS1,not-a-time,45,7.2,37.44,-122.16\n"
        );
        match parse_sessions(csv.as_bytes()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zoneless_timestamp_rejected() {
        let csv = format!("{HEADER}S1,2019-03-02T10:15:00,45,7.2,37.44,-122.16\n");
        assert!(matches!(
            parse_sessions(csv.as_bytes()),
            Err(IngestError::Parse { .. })
        ));
    }

    #[test]
    fn negative_energy_is_validation_error() {
        let csv = format!("{HEADER}S1,2019-03-02T10:15:00Z,45,-1.0,37.44,-122.16\n");
        assert!(matches!(
            parse_sessions(csv.as_bytes()),
            Err(IngestError::Validation { field: "energy_kwh", .. })
        ));
        let csv = format!("{HEADER}S1,2019-03-02T10:15:00Z,-3,1.0,37.44,-122.16\n");
        assert!(matches!(
            parse_sessions(csv.as_bytes()),
            Err(IngestError::Validation { field: "duration_min", .. })
        ));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "station_id,start_time,duration_min,lat,lon\nS1,2019-03-02T10:15:00Z,45,1,2\n";
        match parse_sessions(csv.as_bytes()) {
            Err(IngestError::MissingColumn(c)) => assert_eq!(c, "energy_kwh"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_duplicates_dropped_partial_kept() {
        let csv = format!(
            "{HEADER}S1,2019-03-02T10:15:00Z,45,7.2,37.44,-122.16\n\
             S1,2019-03-02T10:15:00Z,45,7.2,37.44,-122.16\n\
             S1,2019-03-02T10:15:00Z,46,7.2,37.44,-122.16\n"
        );
        assert_eq!(parse_sessions(csv.as_bytes()).unwrap().len(), 2);
    }

    fn session(ts: &str, energy: f64, duration: f64) -> ChargingSession {
        ChargingSession {
            station_id: "S1".into(),
            start_time: DateTime::parse_from_rfc3339(ts).unwrap().with_timezone(&Utc),
            duration_min: duration,
            energy_kwh: energy,
            location: Location { lat: 0.0, lon: 0.0 },
        }
    }

    #[test]
    fn aggregate_sums_and_flags_missing() {
        let a = session("2019-03-02T08:00:00Z", 3.0, 30.0);
        let b = session("2019-03-02T18:00:00Z", 4.5, 30.0);
        let late = session("2019-03-04T23:50:00Z", 2.0, 45.0);
        let s = aggregate_daily(&[&a, &b, &late], "S1", day("2019-03-02"), day("2019-03-05")).unwrap();
        assert_eq!(s.demand, vec![7.5, 0.0, 2.0, 0.0]);
        assert_eq!(s.missing, vec![false, true, false, true]);
    }

    #[test]
    fn zero_energy_session_counts_as_observed() {
        let a = session("2019-03-02T08:00:00Z", 0.0, 30.0);
        let s = aggregate_daily(&[&a], "S1", day("2019-03-02"), day("2019-03-02")).unwrap();
        assert_eq!(s.missing, vec![false]);
    }

    #[test]
    fn aggregate_rejects_empty_range_and_foreign_station() {
        assert!(matches!(
            aggregate_daily(&[], "S1", day("2019-03-05"), day("2019-03-02")),
            Err(IngestError::EmptyRange { .. })
        ));
        let mut other = session("2019-03-02T08:00:00Z", 1.0, 1.0);
        other.station_id = "S2".into();
        assert!(matches!(
            aggregate_daily(&[&other], "S1", day("2019-03-02"), day("2019-03-02")),
            Err(IngestError::ForeignSession { .. })
        ));
    }

    fn series_with_missing(id: &str, missing: usize, total: usize) -> DailyDemandSeries {
        DailyDemandSeries {
            station_id: id.into(),
            start_date: day("2020-01-01"),
            end_date: day("2020-01-01") + chrono::Days::new(total as u64 - 1),
            demand: vec![1.0; total],
            missing: (0..total).map(|i| i < missing).collect(),
        }
    }

    #[test]
    fn filter_threshold_is_inclusive() {
        let set = vec![
            series_with_missing("forty", 40, 100),
            series_with_missing("exact", 35, 100),
            series_with_missing("clean", 0, 100),
        ];
        let report = filter_stations(&set, 0.35);
        assert_eq!(report.retained, vec!["exact", "clean"]);
        assert_eq!(report.dropped.len(), 1);
        assert_eq!(report.dropped[0].0, "forty");
        assert!(filter_stations(&set, 0.01).retained.contains(&"clean".to_string()));
    }

    #[test]
    fn usable_probability_values() {
        let p = usable_sample_probability(0.2, 14, 7, 0);
        assert!((p - 0.8f64.powi(21)).abs() < 1e-15);
        assert!((p - 0.00922).abs() < 1e-5);
        assert_eq!(usable_sample_probability(0.0, 30, 9, 4), 1.0);
        // Repeated multiplication as an independent check.
        let mut expected = 1.0;
        for _ in 0..42 {
            expected *= 0.9;
        }
        let p = usable_sample_probability(0.1, 14, 7, 1);
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.011973).abs() < 1e-6);
    }

    #[test]
    fn series_csv_round_trip() {
        let s = series_with_missing("S9", 3, 10);
        let mut buf = Vec::new();
        write_series(&mut buf, &[s.clone()]).unwrap();
        assert_eq!(read_series(buf.as_slice()).unwrap(), vec![s]);
    }

    proptest! {
        #[test]
        fn aggregation_conserves_energy(
            entries in proptest::collection::vec((0u32..30, 0u32..86_400, 0.0f64..80.0), 1..60)
        ) {
            let base = day("2021-06-01").and_hms_opt(0, 0, 0).unwrap().and_utc();
            let sessions: Vec<ChargingSession> = entries.iter().map(|&(d, secs, e)| ChargingSession {
                station_id: "S1".into(),
                start_time: base + chrono::Duration::days(d as i64) + chrono::Duration::seconds(secs as i64),
                duration_min: 10.0,
                energy_kwh: e,
                location: Location { lat: 1.0, lon: 2.0 },
            }).collect();
            let refs: Vec<&ChargingSession> = sessions.iter().collect();
            let s = aggregate_daily(&refs, "S1", day("2021-06-01"), day("2021-06-30")).unwrap();
            let total: f64 = sessions.iter().map(|s| s.energy_kwh).sum();
            let agg: f64 = s.demand.iter().sum();
            prop_assert!((total - agg).abs() <= 1e-9 * total.max(1.0));
            for t in 0..s.len() {
                if s.missing[t] { prop_assert_eq!(s.demand[t], 0.0); }
            }
        }

        #[test]
        fn filter_is_monotone(fracs in proptest::collection::vec(0usize..=20, 1..12), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let set: Vec<_> = fracs.iter().enumerate()
                .map(|(i, &m)| series_with_missing(&format!("S{i}"), m, 20)).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let small = filter_stations(&set, lo).retained;
            let large = filter_stations(&set, hi).retained;
            prop_assert!(small.iter().all(|s| large.contains(s)));
        }

        #[test]
        fn usable_probability_decreasing(delta in 0.01f64..0.99, t in 1u32..30, h in 1u32..10, c in 0u32..5) {
            let p = usable_sample_probability(delta, t, h, c);
            prop_assert!(usable_sample_probability((delta + 0.005).min(0.999), t, h, c) < p);
            prop_assert!(usable_sample_probability(delta, t + 1, h, c) < p);
            prop_assert!(usable_sample_probability(delta, t, h + 1, c) < p);
            prop_assert!(usable_sample_probability(delta, t, h, c + 1) < p);
        }

        #[test]
        fn session_csv_round_trip(
            rows in proptest::collection::vec(
                ("[A-Z][0-9]{1,3}", 0i64..2_000_000_000, 0.0f64..600.0, 0.0f64..120.0, -90.0f64..90.0, -180.0f64..180.0),
                1..20)
        ) {
            let sessions: Vec<ChargingSession> = rows.into_iter().enumerate().map(|(i, (id, secs, dur, e, lat, lon))| ChargingSession {
                station_id: id,
                start_time: DateTime::from_timestamp(secs + i as i64, 0).unwrap(),
                duration_min: dur,
                energy_kwh: e,
                location: Location { lat, lon },
            }).collect();
            let mut buf = Vec::new();
            write_sessions(&mut buf, &sessions).unwrap();
            let back = parse_sessions(buf.as_slice()).unwrap();
            prop_assert_eq!(back, sessions);
        }
    }
}
