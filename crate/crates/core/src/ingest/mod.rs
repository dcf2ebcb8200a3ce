//! Raw session logs to per-station daily demand, plus station context.

mod poi;
mod sessions;

pub use poi::{build_contexts, load_pois, read_poi_csv, write_poi_csv, Poi, PoiSource, StationContext};
pub use sessions::{
    aggregate_all, aggregate_daily, filter_stations, parse_sessions, read_series, station_locations,
    usable_sample_probability, write_series, write_sessions, ChargingSession, DailyDemandSeries,
    FilterReport, Location,
};
