//! Reference imputers: observed mean, zero, last observed, linear
//! interpolation and nearest-neighbour donors.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::BaselineError;

/// Written as `mean`, `zero`, `last_observed`, `interpolation` or `knn:K`
/// (plain `knn` means `knn:5`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BaselineKind {
    Mean,
    Zero,
    LastObserved,
    #[default]
    Interpolation,
    Knn { k: usize },
}

impl BaselineKind {
    pub fn name(&self) -> String {
        match self {
            BaselineKind::Mean => "mean".into(),
            BaselineKind::Zero => "zero".into(),
            BaselineKind::LastObserved => "last_observed".into(),
            BaselineKind::Interpolation => "interpolation".into(),
            BaselineKind::Knn { k } => format!("knn:{k}"),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "mean" => BaselineKind::Mean,
            "zero" => BaselineKind::Zero,
            "last_observed" => BaselineKind::LastObserved,
            "interpolation" => BaselineKind::Interpolation,
            "knn" => BaselineKind::Knn { k: 5 },
            other => match other.strip_prefix("knn:").map(str::parse::<usize>) {
                Some(Ok(0)) => return Err(BaselineError::ZeroK),
                Some(Ok(k)) => BaselineKind::Knn { k },
                _ => return Err(BaselineError::UnknownKind(other.to_string())),
            },
        })
    }
}

impl TryFrom<String> for BaselineKind {
    type Error = BaselineError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BaselineKind> for String {
    fn from(k: BaselineKind) -> String {
        k.name()
    }
}

fn observed(values: &[f64], mask: &[bool]) -> Vec<(usize, f64)> {
    values
        .iter()
        .zip(mask)
        .enumerate()
        .filter(|(_, (_, &m))| !m)
        .map(|(i, (&v, _))| (i, v))
        .collect()
}

/// Fills the steps flagged in `mask`; observed steps are returned as is.
/// `pool` holds fully observed donor windows for the KNN imputer.
pub fn impute_baseline(values: &[f64], mask: &[bool], kind: BaselineKind, pool: &[Vec<f64>]) -> Result<Vec<f64>, BaselineError> {
    if values.len() != mask.len() {
        return Err(BaselineError::LengthMismatch(values.len(), mask.len()));
    }
    let obs = observed(values, mask);
    if obs.is_empty() && kind != BaselineKind::Zero {
        return Err(BaselineError::AllMasked);
    }
    let mut out = values.to_vec();
    let hidden = (0..values.len()).filter(|&i| mask[i]);
    match kind {
        BaselineKind::Zero => hidden.for_each(|i| out[i] = 0.0),
        BaselineKind::Mean => {
            let m = obs.iter().map(|o| o.1).sum::<f64>() / obs.len() as f64;
            hidden.for_each(|i| out[i] = m);
        }
        BaselineKind::LastObserved => {
            let mut last = obs[0].1;
            for i in 0..values.len() {
                if mask[i] {
                    out[i] = last;
                } else {
                    last = values[i];
                }
            }
        }
        BaselineKind::Interpolation => {
            for i in hidden {
                let left = obs.iter().rev().find(|o| o.0 < i);
                let right = obs.iter().find(|o| o.0 > i);
                out[i] = match (left, right) {
                    (Some(&(a, va)), Some(&(b, vb))) => va + (vb - va) * (i - a) as f64 / (b - a) as f64,
                    (Some(&(_, v)), None) | (None, Some(&(_, v))) => v,
                    (None, None) => unreachable!("at least one observed step"),
                };
            }
        }
        BaselineKind::Knn { k } => {
            if k == 0 {
                return Err(BaselineError::ZeroK);
            }
            if pool.is_empty() {
                return Err(BaselineError::EmptyPool);
            }
            let scale = (values.len() as f64 / obs.len() as f64).sqrt();
            let mut ranked: Vec<(f64, usize)> = pool
                .iter()
                .enumerate()
                .filter(|(_, d)| d.len() == values.len())
                .map(|(j, d)| {
                    let ss: f64 = obs.iter().map(|&(i, v)| (v - d[i]).powi(2)).sum();
                    (ss.sqrt() * scale, j)
                })
                .collect();
            if ranked.is_empty() {
                return Err(BaselineError::EmptyPool);
            }
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let donors = &ranked[..k.min(ranked.len())];
            for i in hidden {
                out[i] = donors.iter().map(|&(_, j)| pool[j][i]).sum::<f64>() / donors.len() as f64;
            }
        }
    }
    Ok(out)
}
