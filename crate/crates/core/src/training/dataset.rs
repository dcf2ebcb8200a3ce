//! Turns daily series into masked window samples and attaches their
//! retrieval context.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::masks::{gen_mask_random, LAMBDA_GRID};
use crate::error::{Error, ModelError};
use crate::features::{extract_windows, Mask, WindowSample};
use crate::ingest::{DailyDemandSeries, StationContext};
use crate::memory::{RetrievalCorpus, RetrieveOptions};
use crate::model::{attend, ModelInput};
use crate::prompting::{build_prompt, ContextEmbedding, EmbeddingKey, PromptInputs, PromptTemplate};
use crate::seeds;

/// Masking ratio used for training windows: a fixed value, or one drawn
/// per window from [`LAMBDA_GRID`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskRatio {
    Fixed(f64),
    Sweep,
}

/// Deterministic artificial mask of the window ending at `anchor`.
pub fn window_mask(seed: u64, station: &str, anchor: NaiveDate, len: usize, ratio: MaskRatio) -> crate::Result<Mask> {
    let mut rng = seeds::rng(seed, &format!("mask|{station}|{anchor}"));
    let lambda = match ratio {
        MaskRatio::Fixed(l) => l,
        MaskRatio::Sweep => LAMBDA_GRID[rng.random_range(0..LAMBDA_GRID.len())],
    };
    Ok(gen_mask_random(len, lambda, &mut rng)?)
}

/// One sample per fully observed window, masked by [`window_mask`].
pub fn build_samples(series: &[DailyDemandSeries], len: usize, seed: u64, ratio: MaskRatio) -> crate::Result<Vec<WindowSample>> {
    let mut out = Vec::new();
    for s in series {
        for w in extract_windows(s, len)?.into_iter().filter(|w| w.curated) {
            let mask = window_mask(seed, &w.station_id, w.anchor, len, ratio)?;
            out.push(WindowSample::new(&w.station_id, w.anchor, w.values, mask)?);
        }
    }
    Ok(out)
}

pub fn sample_key(sample: &WindowSample) -> EmbeddingKey {
    EmbeddingKey::new(&sample.station_id, sample.anchor)
}

/// Renders the prompt of a window; hidden steps are never shown.
pub fn window_prompt(
    station: &str,
    anchor: NaiveDate,
    demand: &[f64],
    mask: &Mask,
    context: Option<&StationContext>,
    template: &PromptTemplate,
) -> String {
    let (location, pois) = match context {
        Some(c) => (c.location, c.pois.as_slice()),
        None => (Default::default(), &[][..]),
    };
    build_prompt(
        &PromptInputs::for_date(station, demand, mask, anchor, location, pois),
        template,
    )
}

pub fn prompt_items(
    samples: &[WindowSample],
    contexts: &BTreeMap<String, StationContext>,
    template: &PromptTemplate,
) -> Vec<(EmbeddingKey, String)> {
    samples
        .iter()
        .map(|s| {
            (
                sample_key(s),
                window_prompt(
                    &s.station_id,
                    s.anchor,
                    &s.demand_raw,
                    &s.mask,
                    contexts.get(&s.station_id),
                    template,
                ),
            )
        })
        .collect()
}

/// Station id to row of the station table.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StationIndex {
    pub ids: Vec<String>,
}

impl StationIndex {
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v: Vec<String> = ids.into_iter().map(str::to_string).collect();
        v.sort();
        v.dedup();
        StationIndex { ids: v }
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.ids.binary_search_by(|s| s.as_str().cmp(id)).ok()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagOptions {
    pub k: usize,
    /// Skip the query's own corpus entry.
    pub exclude_self: bool,
    /// Skip same-station entries whose window overlaps the query window.
    pub exclude_overlap: bool,
}

impl Default for RagOptions {
    fn default() -> Self {
        RagOptions {
            k: 20,
            exclude_self: true,
            exclude_overlap: true,
        }
    }
}

/// A window with everything the network needs precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub sample: WindowSample,
    pub station: usize,
    pub query: Vec<f64>,
    /// Attention summary of the retrieved neighbours.
    pub context: Vec<f64>,
    pub neighbours: Vec<EmbeddingKey>,
}

impl PreparedSample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            query: &self.query,
            context: &self.context,
            station: self.station,
            calendar: &self.sample.calendar_encoded,
            values: &self.sample.demand_masked_norm,
            mask: self.sample.mask.bits(),
        }
    }

    /// Hidden steps with their normalized truth.
    pub fn targets(&self) -> Vec<(usize, f64)> {
        let t = &self.sample.truth;
        t.indices.iter().copied().zip(t.norm.iter().copied()).collect()
    }
}

/// Retrieves neighbours for `query` and summarizes them.
pub fn retrieval_context(
    query: &ContextEmbedding,
    window_len: usize,
    corpus: &RetrievalCorpus,
    opts: &RagOptions,
) -> crate::Result<(Vec<f64>, Vec<f64>, Vec<EmbeddingKey>)> {
    let station = query.key.station_id.clone();
    let anchor = query.key.date;
    let overlap = move |k: &EmbeddingKey| {
        !(k.station_id == station && (k.date - anchor).num_days().unsigned_abs() < window_len as u64)
    };
    let mut ro = RetrieveOptions::new(opts.k, opts.exclude_self);
    if opts.exclude_overlap {
        ro.filter = Some(&overlap);
    }
    let r = corpus.retrieve(query, ro)?;
    if r.hits.is_empty() {
        return Err(ModelError::NoNeighbours.into());
    }
    let neighbours: Vec<Vec<f64>> = r
        .hits
        .iter()
        .map(|h| corpus.get(h.index).vector.iter().map(|&v| v as f64).collect())
        .collect();
    let q: Vec<f64> = query.vector.iter().map(|&v| v as f64).collect();
    let (_, context) = attend(&q, &neighbours)?;
    Ok((q, context, r.hits.into_iter().map(|h| h.key).collect()))
}

pub fn prepare_samples(
    samples: &[WindowSample],
    stations: &StationIndex,
    embeddings: &HashMap<EmbeddingKey, Vec<f32>>,
    corpus: &RetrievalCorpus,
    opts: &RagOptions,
) -> crate::Result<Vec<PreparedSample>> {
    samples
        .par_iter()
        .map(|s| {
            let key = sample_key(s);
            let vector = embeddings
                .get(&key)
                .ok_or_else(|| Error::Config(format!("no embedding for {key}")))?;
            let station = stations
                .get(&s.station_id)
                .ok_or_else(|| Error::Config(format!("station {} not in the station table", s.station_id)))?;
            let query = ContextEmbedding {
                key,
                vector: vector.clone(),
                provider_tag: String::new(),
            };
            let (q, context, neighbours) = retrieval_context(&query, s.len(), corpus, opts)?;
            Ok(PreparedSample {
                sample: s.clone(),
                station,
                query: q,
                context,
                neighbours,
            })
        })
        .collect()
}
