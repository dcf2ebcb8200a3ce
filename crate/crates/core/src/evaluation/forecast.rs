//! Downstream forecasting on raw versus imputed series.
//!
//! Two forecasters predict the next `horizon` days from the previous
//! `lookback` days: a weekly seasonal-naive rule and a ridge autoregressor
//! fitted directly per horizon step. Each is run once on the raw series
//! (missing days read as zero, training only on fully observed windows) and
//! once on the imputed series (all windows). Errors are scored only at
//! target days that were genuinely observed.

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon: usize,
    pub lookback: usize,
    pub ridge_lambda: f64,
    /// Trailing share of each station's origins used for scoring.
    pub eval_fraction: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            horizon: 3,
            lookback: 7,
            ridge_lambda: 1.0,
            eval_fraction: 0.2,
        }
    }
}

/// One station: raw values (`None` = missing) and the completed series.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    pub raw: Vec<Option<f64>>,
    pub imputed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterImpact {
    pub forecaster: String,
    pub raw_mae: f64,
    pub raw_mse: f64,
    pub imputed_mae: f64,
    pub imputed_mse: f64,
    pub delta_mae_pct: f64,
    pub delta_mse_pct: f64,
    /// Set when a raw error is zero and the percentage change is reported
    /// as zero.
    pub zero_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastImpact {
    pub scored_targets: usize,
    pub forecasters: Vec<ForecasterImpact>,
}

/// Percentage change `(raw - imputed) / raw * 100`; zero with a flag when
/// `raw` is zero.
pub fn pct_change(raw: f64, imputed: f64) -> (f64, bool) {
    if raw == 0.0 {
        (0.0, true)
    } else {
        ((raw - imputed) / raw * 100.0, false)
    }
}

/// Solves `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Ridge regression with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Ridge {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl Ridge {
    pub fn fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Option<Ridge> {
        let n = x.len();
        if n == 0 {
            return None;
        }
        let d = x[0].len();
        let xm: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let mut a = vec![vec![0.0; d]; d];
        let mut b = vec![0.0; d];
        for (row, &t) in x.iter().zip(y) {
            for i in 0..d {
                let xi = row[i] - xm[i];
                b[i] += xi * (t - ym);
                for j in 0..d {
                    a[i][j] += xi * (row[j] - xm[j]);
                }
            }
        }
        for (i, r) in a.iter_mut().enumerate() {
            r[i] += lambda.max(1e-9);
        }
        let weights = solve(a, b)?;
        let intercept = ym - weights.iter().zip(&xm).map(|(w, m)| w * m).sum::<f64>();
        Some(Ridge { weights, intercept })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

struct Origins {
    /// `(station, t)` with `t` the last input day.
    train: Vec<(usize, usize)>,
    eval: Vec<(usize, usize)>,
}

fn origins(series: &[ForecastSeries], cfg: &ForecastConfig) -> Origins {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (s, ser) in series.iter().enumerate() {
        let n = ser.raw.len();
        if n < cfg.lookback + cfg.horizon {
            continue;
        }
        let all: Vec<usize> = (cfg.lookback - 1..n - cfg.horizon).collect();
        let n_eval = ((all.len() as f64 * cfg.eval_fraction).floor() as usize).clamp(1, all.len());
        let first_eval = all[all.len() - n_eval];
        for &t in &all {
            if t >= first_eval {
                eval.push((s, t));
            } else if t + cfg.horizon <= first_eval {
                train.push((s, t));
            }
        }
    }
    Origins { train, eval }
}

fn raw_value(v: Option<f64>) -> f64 {
    v.unwrap_or(0.0)
}

fn inputs(ser: &ForecastSeries, t: usize, lookback: usize, imputed: bool) -> Vec<f64> {
    (t + 1 - lookback..=t)
        .map(|i| if imputed { ser.imputed[i] } else { raw_value(ser.raw[i]) })
        .collect()
}

fn fully_observed(ser: &ForecastSeries, t: usize, cfg: &ForecastConfig) -> bool {
    ser.raw[t + 1 - cfg.lookback..=t + cfg.horizon].iter().all(Option::is_some)
}

#[derive(Default)]
struct Errors {
    abs: f64,
    sq: f64,
    n: usize,
}

impl Errors {
    fn push(&mut self, pred: f64, truth: f64) {
        self.abs += (pred - truth).abs();
        self.sq += (pred - truth).powi(2);
        self.n += 1;
    }

    fn mae(&self) -> f64 {
        self.abs / self.n as f64
    }

    fn mse(&self) -> f64 {
        self.sq / self.n as f64
    }
}

fn fit_ridge(series: &[ForecastSeries], train: &[(usize, usize)], cfg: &ForecastConfig, imputed: bool) -> Result<Vec<Ridge>, EvalError> {
    let rows: Vec<(usize, usize)> = train
        .iter()
        .copied()
        .filter(|&(s, t)| imputed || fully_observed(&series[s], t, cfg))
        .collect();
    if rows.is_empty() {
        return Err(EvalError::NoOrigins);
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|&(s, t)| inputs(&series[s], t, cfg.lookback, imputed)).collect();
    (1..=cfg.horizon)
        .map(|h| {
            let y: Vec<f64> = rows
                .iter()
                .map(|&(s, t)| if imputed { series[s].imputed[t + h] } else { raw_value(series[s].raw[t + h]) })
                .collect();
            Ridge::fit(&x, &y, cfg.ridge_lambda).ok_or(EvalError::NoOrigins)
        })
        .collect()
}

pub fn forecast_impact(series: &[ForecastSeries], cfg: &ForecastConfig) -> Result<ForecastImpact, EvalError> {
    if cfg.lookback == 0 || cfg.horizon == 0 {
        return Err(EvalError::NoOrigins);
    }
    for s in series {
        if s.raw.len() != s.imputed.len() {
            return Err(EvalError::LengthMismatch(s.raw.len(), s.imputed.len()));
        }
    }
    let o = origins(series, cfg);
    let ridge_raw = fit_ridge(series, &o.train, cfg, false)?;
    let ridge_imp = fit_ridge(series, &o.train, cfg, true)?;

    let mut naive = [Errors::default(), Errors::default()];
    let mut ridge = [Errors::default(), Errors::default()];
    for &(s, t) in &o.eval {
        let ser = &series[s];
        let xr = inputs(ser, t, cfg.lookback, false);
        let xi = inputs(ser, t, cfg.lookback, true);
        for h in 1..=cfg.horizon {
            let Some(truth) = ser.raw[t + h] else { continue };
            // Same weekday one week earlier, or the latest input when that
            // day lies outside the lookback.
            let lag = (cfg.lookback + h).checked_sub(8);
            let pick = |x: &[f64]| lag.and_then(|l| x.get(l)).copied().unwrap_or(x[x.len() - 1]);
            naive[0].push(pick(&xr), truth);
            naive[1].push(pick(&xi), truth);
            ridge[0].push(ridge_raw[h - 1].predict(&xr), truth);
            ridge[1].push(ridge_imp[h - 1].predict(&xi), truth);
        }
    }
    if naive[0].n == 0 {
        return Err(EvalError::NoOrigins);
    }
    let report = |name: &str, e: &[Errors; 2]| {
        let (dm, z1) = pct_change(e[0].mae(), e[1].mae());
        let (ds, z2) = pct_change(e[0].mse(), e[1].mse());
        ForecasterImpact {
            forecaster: name.to_string(),
            raw_mae: e[0].mae(),
            raw_mse: e[0].mse(),
            imputed_mae: e[1].mae(),
            imputed_mse: e[1].mse(),
            delta_mae_pct: dm,
            delta_mse_pct: ds,
            zero_baseline: z1 || z2,
        }
    };
    Ok(ForecastImpact {
        scored_targets: naive[0].n,
        forecasters: vec![report("seasonal_naive", &naive), report("ridge_ar", &ridge)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn weekly(n: usize, phase: usize) -> Vec<f64> {
        (0..n).map(|i| 20.0 + 8.0 * (2.0 * std::f64::consts::PI * ((i + phase) % 7) as f64 / 7.0).sin()).collect()
    }

    fn complete(v: &[f64]) -> ForecastSeries {
        ForecastSeries {
            raw: v.iter().map(|&x| Some(x)).collect(),
            imputed: v.to_vec(),
        }
    }

    #[test]
    fn ridge_recovers_linear_map() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, ((i * 7) % 11) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 + 2.0 * r[0] - 0.5 * r[1]).collect();
        let m = Ridge::fit(&x, &y, 1e-9).unwrap();
        assert_abs_diff_eq!(m.weights[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.weights[1], -0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(m.intercept, 3.0, epsilon = 1e-5);
    }

    #[test]
    fn no_gaps_gives_zero_change() {
        let series: Vec<ForecastSeries> = (0..3)
            .map(|s| {
                let mut v = weekly(120, s);
                for (i, x) in v.iter_mut().enumerate() {
                    *x += ((i * 13 + s * 5) % 9) as f64;
                }
                complete(&v)
            })
            .collect();
        let r = forecast_impact(&series, &ForecastConfig::default()).unwrap();
        for f in &r.forecasters {
            assert_eq!(f.delta_mae_pct, 0.0);
            assert_eq!(f.delta_mse_pct, 0.0);
        }
    }

    #[test]
    fn exact_weekly_signal_has_zero_baseline() {
        let r = forecast_impact(&[complete(&weekly(100, 0))], &ForecastConfig::default()).unwrap();
        let naive = &r.forecasters[0];
        assert!(naive.raw_mae < 1e-12 && naive.imputed_mae < 1e-12);
        assert_eq!(naive.delta_mae_pct, 0.0);
        assert!(naive.zero_baseline);
    }

    #[test]
    fn oracle_imputation_beats_zero_fill() {
        let series_with = |oracle: bool| -> Vec<ForecastSeries> {
            (0..3)
                .map(|s| {
                    let truth = weekly(200, s);
                    let raw: Vec<Option<f64>> = truth
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| if (i + 3 * s) % 11 == 0 || (i + s) % 17 < 2 { None } else { Some(v) })
                        .collect();
                    let imputed = raw
                        .iter()
                        .zip(&truth)
                        .map(|(r, &t)| r.unwrap_or(if oracle { t } else { 0.0 }))
                        .collect();
                    ForecastSeries { raw, imputed }
                })
                .collect()
        };
        let cfg = ForecastConfig::default();
        let oracle = forecast_impact(&series_with(true), &cfg).unwrap();
        let zero = forecast_impact(&series_with(false), &cfg).unwrap();
        for (o, z) in oracle.forecasters.iter().zip(&zero.forecasters) {
            assert!(o.delta_mae_pct > z.delta_mae_pct, "{o:?} vs {z:?}");
            assert!(o.delta_mse_pct > z.delta_mse_pct);
            assert!(o.delta_mae_pct > 0.0 && o.delta_mse_pct.abs() >= o.delta_mae_pct.abs());
        }
    }

    #[test]
    fn too_short_series_fail() {
        assert!(matches!(
            forecast_impact(&[complete(&[1.0; 8])], &ForecastConfig::default()),
            Err(EvalError::NoOrigins)
        ));
    }
}
