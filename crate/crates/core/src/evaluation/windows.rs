//! Scores the model and the reference imputers on artificially masked
//! test windows, grouped by the number of hidden days.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{calibration_curve, prob_metrics, ProbMetrics};
use crate::baselines::{impute_baseline, BaselineKind};
use crate::error::EvalError;
use crate::model::GaussianSequence;
use crate::training::dataset::PreparedSample;

/// Name under which the model appears in score tables.
pub const MODEL_NAME: &str = "model";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub masked_count: usize,
    pub windows: usize,
    /// MAE in kWh per imputer.
    pub mae: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEvaluation {
    pub by_count: Vec<CountRow>,
    /// MAE in kWh over every masked step.
    pub overall_mae: BTreeMap<String, f64>,
    /// Normalized-scale probabilistic scores of the model.
    pub prob: ProbMetrics,
    pub calibration: Vec<(f64, f64)>,
}

/// Model point forecast in kWh, clamped at zero.
pub fn model_kwh(sample: &PreparedSample, pred: &GaussianSequence) -> Vec<f64> {
    let s = &sample.sample;
    pred.mean.iter().map(|m| (m * s.norm_std + s.norm_mean).max(0.0)).collect()
}

#[derive(Default)]
struct Acc {
    abs: f64,
    n: usize,
}

pub fn evaluate_windows(
    data: &[PreparedSample],
    preds: &[GaussianSequence],
    baselines: &[BaselineKind],
    pool: &[Vec<f64>],
    alphas: &[f64],
) -> crate::Result<WindowEvaluation> {
    if data.len() != preds.len() {
        return Err(EvalError::LengthMismatch(data.len(), preds.len()).into());
    }
    if data.is_empty() {
        return Err(EvalError::EmptySample.into());
    }
    let mut by_count: BTreeMap<usize, (usize, BTreeMap<String, Acc>)> = BTreeMap::new();
    let mut overall: BTreeMap<String, Acc> = BTreeMap::new();
    let (mut mean, mut var, mut truth) = (Vec::new(), Vec::new(), Vec::new());
    for (p, pred) in data.iter().zip(preds) {
        let s = &p.sample;
        let mut fills = vec![(MODEL_NAME.to_string(), model_kwh(p, pred))];
        for &kind in baselines {
            fills.push((kind.name(), impute_baseline(&s.demand_raw, s.mask.bits(), kind, pool)?));
        }
        let entry = by_count.entry(s.mask.count()).or_default();
        entry.0 += 1;
        for (name, fill) in fills {
            for (&i, &t) in s.truth.indices.iter().zip(&s.truth.raw) {
                let e = (fill[i] - t).abs();
                for acc in [entry.1.entry(name.clone()).or_default(), overall.entry(name.clone()).or_default()] {
                    acc.abs += e;
                    acc.n += 1;
                }
            }
        }
        for (&i, &t) in s.truth.indices.iter().zip(&s.truth.norm) {
            mean.push(pred.mean[i]);
            var.push(pred.variance[i]);
            truth.push(t);
        }
    }
    let finish = |m: BTreeMap<String, Acc>| m.into_iter().map(|(k, a)| (k, a.abs / a.n as f64)).collect();
    let all: Vec<usize> = (0..mean.len()).collect();
    Ok(WindowEvaluation {
        by_count: by_count
            .into_iter()
            .map(|(c, (windows, acc))| CountRow {
                masked_count: c,
                windows,
                mae: finish(acc),
            })
            .collect(),
        overall_mae: finish(overall),
        prob: prob_metrics(&mean, &var, &truth, &all, alphas)?,
        calibration: calibration_curve(&mean, &var, &truth, alphas)?,
    })
}
