//! Evaluation report: one JSON document plus flat CSV tables for plotting.
//!
//! Reports contain no timestamps or timings, so identical inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::distribution::{DistributionReport, DowQq};
use super::fidelity::MaskFidelityReport;
use super::forecast::ForecastImpact;
use super::windows::WindowEvaluation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationReport {
    pub station_id: String,
    pub imputed_days: usize,
    pub unreachable_days: usize,
    pub clamped_days: usize,
    /// Observed versus imputed demand per imputer.
    pub distribution: BTreeMap<String, DistributionReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: serde_json::Value,
    pub windows: Option<WindowEvaluation>,
    pub stations: Vec<StationReport>,
    /// Pooled observed versus imputed demand per imputer.
    pub distribution: BTreeMap<String, DistributionReport>,
    pub dow_qq: Option<DowQq>,
    pub mask_fidelity: BTreeMap<String, MaskFidelityReport>,
    pub forecast: Option<ForecastImpact>,
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> crate::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct MaeRow<'a> {
    masked_count: usize,
    windows: usize,
    imputer: &'a str,
    mae_kwh: f64,
}

#[derive(Serialize)]
struct CoverageRow {
    alpha: f64,
    coverage: f64,
}

#[derive(Serialize)]
struct QqRow {
    percent: u32,
    observed: f64,
    imputed: f64,
}

#[derive(Serialize)]
struct DowRow {
    weekday: usize,
    observed: Option<f64>,
    imputed: Option<f64>,
}

#[derive(Serialize)]
struct DistRow<'a> {
    imputer: &'a str,
    mean_rel_diff: Option<f64>,
    cv_diff: Option<f64>,
    wasserstein: f64,
    ks_stat: f64,
    ks_p: f64,
    mwu_stat: f64,
    mwu_p: f64,
    similar_ks: bool,
    similar_mwu: bool,
}

impl EvaluationReport {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(std::io::Error::from)? + "\n")
    }

    /// Writes `report.json` and the CSV tables into `dir`; returns the
    /// written paths.
    pub fn write(&self, dir: &Path) -> crate::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()?)?;
        out.push(json);
        if let Some(w) = &self.windows {
            let rows: Vec<MaeRow> = w
                .by_count
                .iter()
                .flat_map(|r| {
                    r.mae.iter().map(|(k, &v)| MaeRow {
                        masked_count: r.masked_count,
                        windows: r.windows,
                        imputer: k,
                        mae_kwh: v,
                    })
                })
                .collect();
            out.push(dir.join("mae_by_count.csv"));
            write_csv(out.last().unwrap(), &rows)?;
            let cov: Vec<CoverageRow> = w
                .calibration
                .iter()
                .map(|&(alpha, coverage)| CoverageRow { alpha, coverage })
                .collect();
            out.push(dir.join("calibration.csv"));
            write_csv(out.last().unwrap(), &cov)?;
        }
        if !self.distribution.is_empty() {
            let rows: Vec<DistRow> = self
                .distribution
                .iter()
                .map(|(k, d)| DistRow {
                    imputer: k,
                    mean_rel_diff: d.mean_rel_diff,
                    cv_diff: d.cv_diff,
                    wasserstein: d.wasserstein,
                    ks_stat: d.ks_stat,
                    ks_p: d.ks_p,
                    mwu_stat: d.mwu_stat,
                    mwu_p: d.mwu_p,
                    similar_ks: d.similar_ks,
                    similar_mwu: d.similar_mwu,
                })
                .collect();
            out.push(dir.join("distribution.csv"));
            write_csv(out.last().unwrap(), &rows)?;
        }
        if let Some(q) = &self.dow_qq {
            let qq: Vec<QqRow> = q
                .qq
                .iter()
                .map(|&(percent, observed, imputed)| QqRow { percent, observed, imputed })
                .collect();
            out.push(dir.join("qq.csv"));
            write_csv(out.last().unwrap(), &qq)?;
            let dow: Vec<DowRow> = (0..7)
                .map(|k| DowRow {
                    weekday: k,
                    observed: q.observed_dow[k],
                    imputed: q.imputed_dow[k],
                })
                .collect();
            out.push(dir.join("dow.csv"));
            write_csv(out.last().unwrap(), &dow)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::distribution::{dist_compare, dow_profile_and_qq};
    use chrono::{Days, NaiveDate};

    #[test]
    fn write_is_reproducible() {
        let d0 = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let obs: Vec<(NaiveDate, f64)> = (0..30).map(|i| (d0 + Days::new(i), (i % 7) as f64)).collect();
        let vals: Vec<f64> = obs.iter().map(|x| x.1).collect();
        let mut r = EvaluationReport::default();
        r.distribution.insert("zero".into(), dist_compare(&vals, &[0.0; 5]).unwrap());
        r.dow_qq = Some(dow_profile_and_qq(&obs, &obs).unwrap());
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = r.write(a.path()).unwrap();
        let pb = r.write(b.path()).unwrap();
        assert_eq!(pa.len(), 4);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
        let back: EvaluationReport = serde_json::from_slice(&fs::read(&pa[0]).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
