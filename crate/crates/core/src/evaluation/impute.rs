//! Fills real gaps of a daily series with the trained model's mean.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError};
use crate::features::{Mask, WindowSample};
use crate::ingest::{DailyDemandSeries, StationContext};
use crate::memory::RetrievalCorpus;
use crate::model::{GaussianSequence, Mode, Model, ModelInput};
use crate::prompting::{embed_all, EmbeddingProvider, PromptTemplate};
use crate::training::dataset::{retrieval_context, sample_key, window_prompt, PreparedSample, RagOptions, StationIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedDay {
    pub date: NaiveDate,
    /// kWh; `None` only for a gap no window could reach.
    pub value: Option<f64>,
    /// kWh², present for imputed days.
    pub variance: Option<f64>,
    pub was_imputed: bool,
    /// The model mean was negative and was raised to zero.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    pub station_id: String,
    pub days: Vec<ImputedDay>,
    pub unreachable: Vec<NaiveDate>,
}

impl ImputationResult {
    pub fn imputed_count(&self) -> usize {
        self.days.iter().filter(|d| d.was_imputed).count()
    }
}

/// Everything inference needs besides the series.
pub struct Imputer<'a> {
    pub model: &'a Model,
    pub stations: &'a StationIndex,
    pub corpus: &'a RetrievalCorpus,
    pub provider: &'a dyn EmbeddingProvider,
    pub contexts: &'a BTreeMap<String, StationContext>,
    pub template: &'a PromptTemplate,
    pub rag: RagOptions,
}

/// Deterministic forward pass over prepared windows.
pub fn predict_windows(model: &Model, data: &[PreparedSample]) -> crate::Result<Vec<GaussianSequence>> {
    data.par_iter()
        .map(|p| Ok(model.forward(&p.input(), Mode::Deterministic)?))
        .collect()
}

/// Anchor index of the window used for gap day `t`: most observed days,
/// then the most central position of `t`, then the earliest anchor.
fn pick_window(missing: &[bool], t: usize, len: usize) -> Option<usize> {
    let n = missing.len();
    let first = t.max(len - 1);
    let last = (t + len - 1).min(n - 1);
    (first..=last)
        .filter_map(|a| {
            let observed = missing[a + 1 - len..=a].iter().filter(|&&m| !m).count();
            // Twice the distance from the centre keeps this integral.
            let pos = t + len - 1 - a;
            let off_centre = (2 * pos).abs_diff(len - 1);
            (observed > 0).then_some((std::cmp::Reverse(observed), off_centre, a))
        })
        .min()
        .map(|c| c.2)
}

impl Imputer<'_> {
    pub fn impute(&self, series: &DailyDemandSeries) -> crate::Result<ImputationResult> {
        let len = self.model.config.window_len;
        let station = self
            .stations
            .get(&series.station_id)
            .ok_or_else(|| EvalError::UnknownStation(series.station_id.clone()))?;
        if self.corpus.dim() != self.model.config.d_emb {
            return Err(Error::Config(format!(
                "corpus dimension {} differs from model dimension {}",
                self.corpus.dim(),
                self.model.config.d_emb
            )));
        }
        let n = series.len();
        let mut chosen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut unreachable = Vec::new();
        for t in (0..n).filter(|&t| series.missing[t]) {
            match (n >= len).then(|| pick_window(&series.missing, t, len)).flatten() {
                Some(a) => chosen.entry(a).or_default().push(t),
                None => unreachable.push(series.date(t)),
            }
        }

        let samples: Vec<WindowSample> = chosen
            .keys()
            .map(|&a| {
                let range = a + 1 - len..=a;
                let values = series.demand[range.clone()].to_vec();
                let mask = Mask::new(series.missing[range].to_vec());
                Ok(WindowSample::new(&series.station_id, series.date(a), values, mask)?)
            })
            .collect::<crate::Result<_>>()?;
        let items: Vec<_> = samples
            .iter()
            .map(|s| {
                let text = window_prompt(
                    &s.station_id,
                    s.anchor,
                    &s.demand_raw,
                    &s.mask,
                    self.contexts.get(&s.station_id),
                    self.template,
                );
                (sample_key(s), text)
            })
            .collect();
        let embedded = embed_all(self.provider, &items, self.model.config.d_emb)?;

        let outputs: Vec<GaussianSequence> = samples
            .par_iter()
            .zip(&embedded)
            .map(|(s, e)| {
                let (query, context, _) = retrieval_context(e, len, self.corpus, &self.rag)?;
                let input = ModelInput {
                    query: &query,
                    context: &context,
                    station,
                    calendar: &s.calendar_encoded,
                    values: &s.demand_masked_norm,
                    mask: s.mask.bits(),
                };
                Ok(self.model.forward(&input, Mode::Deterministic)?)
            })
            .collect::<crate::Result<_>>()?;

        let mut filled: HashMap<usize, (f64, f64, bool)> = HashMap::new();
        for ((&a, days), (s, out)) in chosen.iter().zip(samples.iter().zip(&outputs)) {
            for &t in days {
                let i = t + len - 1 - a;
                let value = out.mean[i] * s.norm_std + s.norm_mean;
                let var = out.variance[i] * s.norm_std * s.norm_std;
                filled.insert(t, (value.max(0.0), var, value < 0.0));
            }
        }
        if let Some(&(_, _, true)) = filled.values().find(|f| f.2) {
            log::warn!("{}: negative imputed demand clamped to zero", series.station_id);
        }
        let days = (0..n)
            .map(|t| {
                let date = series.date(t);
                match (series.missing[t], filled.get(&t)) {
                    (false, _) => ImputedDay {
                        date,
                        value: Some(series.demand[t]),
                        variance: None,
                        was_imputed: false,
                        clamped: false,
                    },
                    (true, Some(&(v, var, clamped))) => ImputedDay {
                        date,
                        value: Some(v),
                        variance: Some(var),
                        was_imputed: true,
                        clamped,
                    },
                    (true, None) => ImputedDay {
                        date,
                        value: None,
                        variance: None,
                        was_imputed: false,
                        clamped: false,
                    },
                }
            })
            .collect();
        if !unreachable.is_empty() {
            log::warn!("{}: {} gap days unreachable by any window", series.station_id, unreachable.len());
        }
        Ok(ImputationResult {
            station_id: series.station_id.clone(),
            days,
            unreachable,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_choice_prefers_observed_then_central_then_early() {
        // Day 5 missing in an otherwise observed series, L = 3: anchors 5, 6, 7
        // each see two observed days; anchor 6 centres day 5.
        let mut m = vec![false; 12];
        m[5] = true;
        assert_eq!(pick_window(&m, 5, 3), Some(6));
        // Gap at 5 and 4: anchor 7 sees [5,6,7] with one missing; anchor 6
        // sees [4,5,6] with two missing.
        m[4] = true;
        assert_eq!(pick_window(&m, 5, 3), Some(7));
        // Even length: anchors 5 and 6 are equally central for L = 4 at day
        // 4 in a clean neighbourhood; the earlier one wins.
        let mut e = vec![false; 12];
        e[4] = true;
        assert_eq!(pick_window(&e, 4, 4), Some(5));
    }

    #[test]
    fn unreachable_when_everything_near_is_missing() {
        let m = vec![true; 6];
        assert_eq!(pick_window(&m, 2, 3), None);
    }
}
