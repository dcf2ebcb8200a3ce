//! End-to-end run: windows, embeddings, split, corpus, training and
//! evaluation. The command-line tool and the integration tests share it.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;
use serde_json::json;

use crate::baselines::{impute_baseline, BaselineKind};
use crate::config::Config;
use crate::error::Error;
use crate::evaluation::{
    dist_compare, dow_profile_and_qq, evaluate_windows, forecast_impact, mask_fidelity, predict_windows,
    EvaluationReport, ForecastSeries, ImputationResult, Imputer, StationReport, WindowEvaluation, MODEL_NAME,
};
use crate::features::WindowSample;
use crate::ingest::{DailyDemandSeries, StationContext};
use crate::memory::RetrievalCorpus;
use crate::model::Model;
use crate::prompting::{embed_all, ContextEmbedding, EmbeddingCache, EmbeddingKey, EmbeddingProvider, PromptTemplate};
use crate::seeds;
use crate::training::{
    build_samples, fit_missingness_profile, gen_mask_dm, gen_mask_ls_matched, init_model, prepare_samples, prompt_items,
    split_indices, train, validation_slice, PreparedSample, StationIndex, TrainOutcome,
};

/// Prompts embedded per provider call; the cache is flushed after each.
const EMBED_CHUNK: usize = 512;

/// Embeds every item not already in `cache`. Returns all vectors and the
/// number of newly computed ones.
pub fn embed_items(
    provider: &dyn EmbeddingProvider,
    mut cache: Option<&mut EmbeddingCache>,
    items: &[(EmbeddingKey, String)],
    dim: usize,
) -> crate::Result<(HashMap<EmbeddingKey, Vec<f32>>, usize)> {
    let mut out = HashMap::with_capacity(items.len());
    let mut todo = Vec::new();
    for item in items {
        match cache.as_ref().and_then(|c| c.get(&item.0)) {
            Some(e) => {
                out.insert(e.key, e.vector);
            }
            None => todo.push(item.clone()),
        }
    }
    let fresh = todo.len();
    for chunk in todo.chunks(EMBED_CHUNK) {
        let embedded = embed_all(provider, chunk, dim)?;
        if let Some(c) = cache.as_deref_mut() {
            for e in &embedded {
                c.put(e)?;
            }
            c.flush()?;
        }
        out.extend(embedded.into_iter().map(|e| (e.key, e.vector)));
    }
    Ok((out, fresh))
}

/// Curated windows with their training masks.
pub fn curated_samples(cfg: &Config, series: &[DailyDemandSeries]) -> crate::Result<Vec<WindowSample>> {
    build_samples(series, cfg.data.window_len, cfg.seed, cfg.mask.ratio())
}

/// Everything training and evaluation need, with retrieval precomputed.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub stations: StationIndex,
    pub corpus: RetrievalCorpus,
    pub train: Vec<PreparedSample>,
    pub val: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub new_embeddings: usize,
}

impl PreparedRun {
    /// Fully observed training windows used as KNN donors.
    pub fn donor_pool(&self) -> Vec<Vec<f64>> {
        self.train
            .iter()
            .chain(&self.val)
            .map(|p| p.sample.demand_raw.clone())
            .collect()
    }
}

pub fn prepare_run(
    cfg: &Config,
    series: &[DailyDemandSeries],
    contexts: &BTreeMap<String, StationContext>,
    provider: &dyn EmbeddingProvider,
    cache: Option<&mut EmbeddingCache>,
    template: &PromptTemplate,
) -> crate::Result<PreparedRun> {
    cfg.validate()?;
    let samples = curated_samples(cfg, series)?;
    let items = prompt_items(&samples, contexts, template);
    let (embeddings, new_embeddings) = embed_items(provider, cache, &items, cfg.embed.dim)?;

    let (train_idx, test_idx) = split_indices(
        &samples,
        cfg.train.split_ratio,
        cfg.train.split_mode,
        seeds::derive(cfg.seed, "split"),
    )?;
    let train_all: Vec<WindowSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let test: Vec<WindowSample> = test_idx.iter().map(|&i| samples[i].clone()).collect();
    let val_idx = validation_slice(&train_all, cfg.train.val_fraction);
    let mut is_val = vec![false; train_all.len()];
    val_idx.iter().for_each(|&i| is_val[i] = true);
    let (val, fit): (Vec<_>, Vec<_>) = train_all.iter().cloned().enumerate().partition(|(i, _)| is_val[*i]);
    let strip = |v: Vec<(usize, WindowSample)>| v.into_iter().map(|x| x.1).collect::<Vec<_>>();
    let (val, fit) = (strip(val), strip(fit));

    let corpus_entries: Vec<ContextEmbedding> = train_all
        .iter()
        .map(|s| {
            let key = EmbeddingKey::new(&s.station_id, s.anchor);
            ContextEmbedding {
                vector: embeddings[&key].clone(),
                key,
                provider_tag: provider.tag().to_string(),
            }
        })
        .collect();
    let corpus = RetrievalCorpus::build(corpus_entries, "train-split")?;
    let stations = StationIndex::from_ids(series.iter().map(|s| s.station_id.as_str()));
    let prep = |v: &[WindowSample]| prepare_samples(v, &stations, &embeddings, &corpus, &cfg.rag);
    Ok(PreparedRun {
        train: prep(&fit)?,
        val: prep(&val)?,
        test: prep(&test)?,
        stations,
        corpus,
        new_embeddings,
    })
}

pub fn train_run(cfg: &Config, run: &PreparedRun) -> crate::Result<TrainOutcome> {
    let model = init_model(cfg.model_config(run.stations.len()), seeds::derive(cfg.seed, "model"))?;
    train(model, &run.train, &run.val, &cfg.train, seeds::derive(cfg.seed, "train"))
}

/// Checkpoint metadata: the effective configuration and station table.
pub fn checkpoint_meta(cfg: &Config, stations: &StationIndex) -> serde_json::Value {
    json!({ "config": cfg, "stations": stations.ids })
}

pub fn from_checkpoint_meta(meta: &serde_json::Value) -> crate::Result<(Config, StationIndex)> {
    let cfg: Config = serde_json::from_value(meta["config"].clone())
        .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    let ids: Vec<String> = serde_json::from_value(meta["stations"].clone())
        .map_err(|e| Error::Config(format!("checkpoint stations: {e}")))?;
    Ok((cfg, StationIndex { ids }))
}

/// Model and baselines on the artificially masked test windows.
pub fn window_evaluation(cfg: &Config, model: &Model, run: &PreparedRun) -> crate::Result<WindowEvaluation> {
    let preds = predict_windows(model, &run.test)?;
    evaluate_windows(&run.test, &preds, &cfg.baseline.compare, &run.donor_pool(), &cfg.eval.alphas)
}

/// Fills every missing day of `series` with a whole-series baseline.
/// Returns `None` for the window-based KNN imputer.
pub fn series_baseline(series: &DailyDemandSeries, kind: BaselineKind) -> crate::Result<Option<Vec<f64>>> {
    if matches!(kind, BaselineKind::Knn { .. }) {
        return Ok(None);
    }
    Ok(Some(impute_baseline(&series.demand, &series.missing, kind, &[])?))
}

fn observed_values(series: &DailyDemandSeries) -> Vec<(NaiveDate, f64)> {
    (0..series.len())
        .filter(|&t| !series.missing[t])
        .map(|t| (series.date(t), series.demand[t]))
        .collect()
}

/// Model imputation completed with interpolation on unreachable days.
pub fn completed_values(series: &DailyDemandSeries, imputed: &ImputationResult) -> crate::Result<Vec<f64>> {
    let fallback = series_baseline(series, BaselineKind::Interpolation)?.expect("interpolation is series-level");
    Ok(imputed
        .days
        .iter()
        .zip(fallback)
        .map(|(d, f)| d.value.unwrap_or(f))
        .collect())
}

/// Real-gap analysis: distributions of imputed versus observed days per
/// imputer, the weekday and quantile profile of the model, mask fidelity
/// of synthetic generators, and the downstream forecasting effect.
pub fn gap_evaluation(
    cfg: &Config,
    series: &[DailyDemandSeries],
    imputations: &[ImputationResult],
    report: &mut EvaluationReport,
) -> crate::Result<()> {
    let mut pooled_obs = Vec::new();
    let mut pooled_imp: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut model_dated = Vec::new();
    let mut forecast_series = Vec::new();
    for (s, imp) in series.iter().zip(imputations) {
        let observed = observed_values(s);
        let obs_vals: Vec<f64> = observed.iter().map(|o| o.1).collect();
        pooled_obs.extend_from_slice(&obs_vals);
        let mut fills: Vec<(String, Vec<f64>)> = Vec::new();
        let model_gap: Vec<(NaiveDate, f64)> = imp
            .days
            .iter()
            .filter(|d| d.was_imputed)
            .map(|d| (d.date, d.value.expect("imputed days carry a value")))
            .collect();
        model_dated.extend_from_slice(&model_gap);
        fills.push((MODEL_NAME.into(), model_gap.iter().map(|x| x.1).collect()));
        for &kind in &cfg.baseline.compare {
            if let Some(v) = series_baseline(s, kind)? {
                let gap: Vec<f64> = (0..s.len()).filter(|&t| s.missing[t]).map(|t| v[t]).collect();
                fills.push((kind.name(), gap));
            }
        }
        let mut distribution = BTreeMap::new();
        if !obs_vals.is_empty() {
            for (name, vals) in &fills {
                if !vals.is_empty() {
                    distribution.insert(name.clone(), dist_compare(&obs_vals, vals)?);
                }
                pooled_imp.entry(name.clone()).or_default().extend_from_slice(vals);
            }
        }
        report.stations.push(StationReport {
            station_id: s.station_id.clone(),
            imputed_days: imp.imputed_count(),
            unreachable_days: imp.unreachable.len(),
            clamped_days: imp.days.iter().filter(|d| d.clamped).count(),
            distribution,
        });
        forecast_series.push(ForecastSeries {
            raw: (0..s.len()).map(|t| (!s.missing[t]).then_some(s.demand[t])).collect(),
            imputed: completed_values(s, imp)?,
        });
    }
    if !pooled_obs.is_empty() {
        for (name, vals) in &pooled_imp {
            if !vals.is_empty() {
                report.distribution.insert(name.clone(), dist_compare(&pooled_obs, vals)?);
            }
        }
        if !model_dated.is_empty() {
            let obs: Vec<(NaiveDate, f64)> = series.iter().flat_map(observed_values).collect();
            report.dow_qq = Some(dow_profile_and_qq(&obs, &model_dated)?);
        }
    }
    report.mask_fidelity = synthetic_mask_fidelity(cfg, series)?;
    match forecast_impact(&forecast_series, &cfg.eval.forecast()) {
        Ok(f) => report.forecast = Some(f),
        Err(e) => log::warn!("forecast impact skipped: {e}"),
    }
    Ok(())
}

/// Real masks against uniform and distribution-matched synthetic masks of
/// the same spans and missing share. Empty when there are no real gaps.
pub fn synthetic_mask_fidelity(
    cfg: &Config,
    series: &[DailyDemandSeries],
) -> crate::Result<BTreeMap<String, crate::evaluation::MaskFidelityReport>> {
    let real: Vec<(NaiveDate, &[bool])> = series.iter().map(|s| (s.start_date, s.missing.as_slice())).collect();
    let mut out = BTreeMap::new();
    let Ok(profile) = fit_missingness_profile(&real) else {
        return Ok(out);
    };
    let fraction = profile.missing_fraction;
    if !(fraction > 0.0 && fraction <= 0.5) {
        log::warn!("missing share {fraction:.3} outside (0, 0.5]; mask fidelity skipped");
        return Ok(out);
    }
    let mut ls_rng = seeds::rng(cfg.seed, "fidelity-ls");
    let mut dm_rng = seeds::rng(cfg.seed, "fidelity-dm");
    let mut ls = Vec::new();
    let mut dm = Vec::new();
    for s in series {
        ls.push(gen_mask_ls_matched(s.len(), cfg.data.window_len, fraction, &mut ls_rng)?);
        dm.push(gen_mask_dm(&profile, s.len(), s.start_date, fraction, &mut dm_rng)?.mask);
    }
    for (name, masks) in [("ls", &ls), ("dm", &dm)] {
        let synth: Vec<(NaiveDate, &[bool])> = series.iter().zip(masks).map(|(s, m)| (s.start_date, m.as_slice())).collect();
        match mask_fidelity(&real, &synth) {
            Ok(r) => {
                out.insert(name.to_string(), r);
            }
            Err(e) => log::warn!("{name} mask fidelity skipped: {e}"),
        }
    }
    Ok(out)
}

/// Imputes the real gaps of every series.
pub fn impute_all(imputer: &Imputer<'_>, series: &[DailyDemandSeries]) -> crate::Result<Vec<ImputationResult>> {
    series.iter().map(|s| imputer.impute(s)).collect()
}

/// Inputs of a complete run.
pub struct RunInputs<'a> {
    pub series: &'a [DailyDemandSeries],
    pub contexts: &'a BTreeMap<String, StationContext>,
    pub provider: &'a dyn EmbeddingProvider,
    pub template: &'a PromptTemplate,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcome: TrainOutcome,
    pub run: PreparedRun,
    pub imputations: Vec<ImputationResult>,
    pub report: EvaluationReport,
}

/// Prepare, train, impute real gaps and evaluate.
pub fn run_all(cfg: &Config, inputs: &RunInputs<'_>, cache: Option<&mut EmbeddingCache>) -> crate::Result<RunOutput> {
    let run = prepare_run(cfg, inputs.series, inputs.contexts, inputs.provider, cache, inputs.template)?;
    let outcome = train_run(cfg, &run)?;
    let imputer = Imputer {
        model: &outcome.model,
        stations: &run.stations,
        corpus: &run.corpus,
        provider: inputs.provider,
        contexts: inputs.contexts,
        template: inputs.template,
        rag: cfg.rag,
    };
    let imputations = impute_all(&imputer, inputs.series)?;
    let mut report = EvaluationReport {
        config: serde_json::to_value(cfg).expect("config serializes"),
        windows: Some(window_evaluation(cfg, &outcome.model, &run)?),
        ..Default::default()
    };
    gap_evaluation(cfg, inputs.series, &imputations, &mut report)?;
    Ok(RunOutput {
        outcome,
        run,
        imputations,
        report,
    })
}
