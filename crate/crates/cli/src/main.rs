//! `chargefill` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod data;
mod manifest;
mod plots;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chargefill::config::{Config, MaskKind};
use chargefill::evaluation::{calibration_curve, crps_gaussian, EvaluationReport, Imputer};
use chargefill::ingest::{
    aggregate_all, filter_stations, load_pois, parse_sessions, read_poi_csv, station_locations, usable_sample_probability,
    write_poi_csv, PoiSource,
};
use chargefill::memory::RetrievalCorpus;
use chargefill::model::checkpoint;
use chargefill::pipeline::{
    checkpoint_meta, curated_samples, embed_items, from_checkpoint_meta, gap_evaluation, impute_all, prepare_run,
    train_run, window_evaluation,
};
use chargefill::prompting::EmbeddingCache;
use chargefill::seeds;
use chargefill::training::{fit_missingness_profile, gen_mask_dm, gen_mask_random, prompt_items};
use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Invalid invocation; reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "chargefill", version, about = "Impute missing days of EV-charging demand")]
struct Cli {
    /// TOML configuration; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one configuration key, e.g. `--set train.max_epochs=20`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    #[value(name = "ls", alias = "LS")]
    Ls,
    #[value(name = "dm", alias = "DM")]
    Dm,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate sessions into daily series and drop sparse stations.
    Ingest {
        #[arg(long)]
        sessions: PathBuf,
        /// PoI CSV; the configured endpoint, if any, is queried otherwise.
        #[arg(long)]
        pois: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Largest missing-day share a station may have.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Embed the prompt of every curated window into the cache.
    Embed {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        cache: PathBuf,
    },
    /// Build the retrieval corpus from the training split.
    Corpus {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model; writes the checkpoint, its corpus and a training log.
    Train {
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill the missing days of a series directory.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        series: PathBuf,
        /// Defaults to the corpus written next to the checkpoint.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a series with known values.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw synthetic missingness masks.
    Maskgen {
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Masking ratio of uniform masks.
        #[arg(long)]
        lambda: Option<f64>,
        /// Window length of uniform masks.
        #[arg(long = "L")]
        window: Option<usize>,
        /// Number of uniform masks.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Series whose real gaps define the distribution-matched profile.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Share of days the distribution-matched masks hide.
        #[arg(long)]
        fraction: Option<f64>,
        /// Writes the masks and the series with the gaps applied.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Chance that a sample survives independent missingness.
    Prob {
        #[arg(long)]
        delta: f64,
        /// Lookback days.
        #[arg(long = "T")]
        lookback: u32,
        /// Horizon days.
        #[arg(long = "H")]
        horizon: u32,
        /// Neighbouring stations in the sample.
        #[arg(long = "C", default_value_t = 0)]
        neighbours: u32,
    },
    /// Full evaluation report of a checkpoint on a series directory.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write SVG figures.
        #[arg(long)]
        plots: bool,
    },
}

/// Sets `key` (dotted path) in a serialized config to the TOML literal
/// `raw`, falling back to a plain string.
fn set_key(root: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| usage(format!("bad key `{key}`")))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| usage(format!("`{p}` in `{key}` is not a section")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl Cli {
    fn base_config(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(p).map_err(|e| usage(e.to_string())),
            None => Ok(Config::default()),
        }
    }

    /// Applies `--seed` and `--set` on top of `cfg`.
    fn overridden(&self, cfg: Config) -> Result<Config> {
        let mut table = toml::Table::try_from(&cfg)?;
        if let Some(seed) = self.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| usage(format!("expected KEY=VALUE, got `{s}`")))?;
            set_key(&mut table, k.trim(), v.trim())?;
        }
        let cfg = Config::from_toml(&toml::to_string(&table)?).map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    fn config(&self) -> Result<Config> {
        self.overridden(self.base_config()?)
    }

    fn template_base(&self) -> Option<&Path> {
        self.config.as_deref().and_then(Path::parent)
    }
}

fn open_cache(path: Option<&Path>, dim: usize) -> Result<Option<EmbeddingCache>> {
    path.map(|p| EmbeddingCache::open(p, dim).with_context(|| format!("opening cache {}", p.display())))
        .transpose()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Checkpoint plus its configuration with command-line overrides applied.
fn load_checkpoint(cli: &Cli, path: &Path) -> Result<(chargefill::model::Model, Config, chargefill::training::StationIndex)> {
    let (model, meta) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let (cfg, stations) = from_checkpoint_meta(&meta)?;
    if cli.config.is_some() {
        log::warn!("--config is ignored; the checkpoint carries its configuration");
    }
    let cfg = cli.overridden(cfg)?;
    if cfg.model_config(stations.len()) != model.config {
        return Err(usage("overrides change the network shape of the checkpoint"));
    }
    Ok((model, cfg, stations))
}

fn cmd_ingest(cli: &Cli, sessions: &Path, pois: Option<&Path>, out: &Path, threshold: Option<f64>) -> Result<()> {
    let mut cfg = cli.config()?;
    if let Some(t) = threshold {
        cfg.data.missing_threshold = t;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
    }
    let file = File::open(sessions).with_context(|| format!("opening {}", sessions.display()))?;
    let parsed = parse_sessions(file).with_context(|| format!("parsing {}", sessions.display()))?;
    let all = aggregate_all(&parsed);
    let report = filter_stations(&all, cfg.data.missing_threshold);
    let kept: Vec<_> = all.into_iter().filter(|s| report.retained.contains(&s.station_id)).collect();
    let mut locations = station_locations(&parsed);
    locations.retain(|id, _| report.retained.contains(id));

    fs::create_dir_all(out)?;
    let mut inputs = vec![sessions.to_path_buf()];
    let poi_path = out.join(data::POIS);
    match (pois, &cfg.poi.endpoint) {
        (Some(p), _) => {
            let mut raw = read_poi_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
            raw.retain(|id, _| locations.contains_key(id));
            write_poi_csv(&poi_path, &raw)?;
            inputs.push(p.to_path_buf());
        }
        (None, Some(endpoint)) => {
            let source = PoiSource::Remote {
                endpoint: endpoint.clone(),
                cache: Some(poi_path.clone()),
                retries: cfg.poi.retries,
            };
            load_pois(&source, &locations, cfg.poi.radius_km)?;
        }
        (None, None) => write_poi_csv(&poi_path, &BTreeMap::new())?,
    }
    let series_path = out.join(data::SERIES);
    data::write_series_file(&series_path, &kept)?;
    let stations_path = out.join(data::STATIONS);
    data::write_locations(&stations_path, &locations)?;
    let report_path = out.join("filter_report.json");
    write_json(&report_path, &report)?;
    manifest::record(
        out,
        "ingest",
        &cfg,
        &inputs,
        &[
            ("series", series_path),
            ("stations", stations_path),
            ("pois", poi_path),
            ("filter_report", report_path),
        ],
    )?;
    println!("kept {} stations, dropped {}", report.retained.len(), report.dropped.len());
    for (id, frac) in &report.dropped {
        println!("  dropped {id}: {:.1}% missing", frac * 100.0);
    }
    Ok(())
}

fn cmd_embed(cli: &Cli, series: &Path, cache_path: &Path) -> Result<()> {
    let cfg = cli.config()?;
    let dir = data::load_series_dir(series, cfg.poi.radius_km)?;
    let template = cfg.embed.template(cli.template_base())?;
    let samples = curated_samples(&cfg, &dir.series)?;
    let items = prompt_items(&samples, &dir.contexts, &template);
    let provider = cfg.embed.provider(cfg.seed)?;
    let mut cache = EmbeddingCache::open(cache_path, cfg.embed.dim)?;
    let (_, fresh) = embed_items(provider.as_ref(), Some(&mut cache), &items, cfg.embed.dim)?;
    manifest::record(
        &manifest::dir_for(cache_path, false),
        "embed",
        &cfg,
        &dir.files,
        &[("cache", cache_path.to_path_buf())],
    )?;
    println!("{} prompts, {fresh} newly embedded, cache holds {}", items.len(), cache.len());
    Ok(())
}

fn cmd_corpus(cli: &Cli, series: &Path, cache: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = cli.config()?;
    let dir = data::load_series_dir(series, cfg.poi.radius_km)?;
    let template = cfg.embed.template(cli.template_base())?;
    let provider = cfg.embed.provider(cfg.seed)?;
    let mut cache = open_cache(cache, cfg.embed.dim)?;
    let run = prepare_run(&cfg, &dir.series, &dir.contexts, provider.as_ref(), cache.as_mut(), &template)?;
    run.corpus.save(out)?;
    manifest::record(
        &manifest::dir_for(out, false),
        "corpus",
        &cfg,
        &dir.files,
        &[("corpus", out.to_path_buf()), ("corpus_manifest", chargefill::memory::manifest_path(out))],
    )?;
    println!("corpus of {} entries, dim {}", run.corpus.len(), run.corpus.dim());
    Ok(())
}

fn corpus_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("corpus")
}

#[derive(Serialize)]
struct LogRow {
    epoch: usize,
    train_elbo: f64,
    train_rec: f64,
    train_kl: f64,
    val_elbo: Option<f64>,
    lr: f64,
    wall_ms: u64,
}

fn cmd_train(cli: &Cli, series: &Path, cache: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = cli.config()?;
    let dir = data::load_series_dir(series, cfg.poi.radius_km)?;
    let template = cfg.embed.template(cli.template_base())?;
    let provider = cfg.embed.provider(cfg.seed)?;
    let mut cache = open_cache(cache, cfg.embed.dim)?;
    let run = prepare_run(&cfg, &dir.series, &dir.contexts, provider.as_ref(), cache.as_mut(), &template)?;
    log::info!(
        "{} training, {} validation, {} test windows",
        run.train.len(),
        run.val.len(),
        run.test.len()
    );
    let outcome = train_run(&cfg, &run)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    checkpoint::save(&outcome.model, &checkpoint_meta(&cfg, &run.stations), out)?;
    let corpus = corpus_path_for(out);
    run.corpus.save(&corpus)?;
    let log_path = out.with_extension("log.csv");
    let mut w = csv::Writer::from_path(&log_path)?;
    for l in &outcome.log {
        w.serialize(LogRow {
            epoch: l.epoch,
            train_elbo: l.train_elbo,
            train_rec: l.train_rec,
            train_kl: l.train_kl,
            val_elbo: l.val_elbo,
            lr: l.lr,
            wall_ms: l.wall_ms,
        })?;
    }
    w.flush()?;
    manifest::record(
        &manifest::dir_for(out, false),
        "train",
        &cfg,
        &dir.files,
        &[("checkpoint", out.to_path_buf()), ("corpus", corpus), ("train_log", log_path)],
    )?;
    println!(
        "best epoch {} of {} (score {:.4}){}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_score,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

#[derive(Serialize)]
struct ImputeSummary<'a> {
    config: &'a Config,
    imputed_days: usize,
    clamped_days: usize,
    /// Gaps no window could reach, per station.
    unreachable: BTreeMap<&'a str, &'a [NaiveDate]>,
}

fn cmd_impute(cli: &Cli, ckpt: &Path, series: &Path, corpus: Option<&Path>, out: &Path) -> Result<()> {
    let (model, cfg, stations) = load_checkpoint(cli, ckpt)?;
    let dir = data::load_series_dir(series, cfg.poi.radius_km)?;
    let corpus_path = corpus.map(Path::to_path_buf).unwrap_or_else(|| corpus_path_for(ckpt));
    let corpus = RetrievalCorpus::load(&corpus_path).with_context(|| format!("loading {}", corpus_path.display()))?;
    let template = cfg.embed.template(None)?;
    let provider = cfg.embed.provider(cfg.seed)?;
    let imputer = Imputer {
        model: &model,
        stations: &stations,
        corpus: &corpus,
        provider: provider.as_ref(),
        contexts: &dir.contexts,
        template: &template,
        rag: cfg.rag,
    };
    let results = impute_all(&imputer, &dir.series)?;
    fs::create_dir_all(out)?;
    let table = out.join("imputed.csv");
    data::write_imputations(&table, &results)?;
    let summary = ImputeSummary {
        config: &cfg,
        imputed_days: results.iter().map(|r| r.imputed_count()).sum(),
        clamped_days: results.iter().flat_map(|r| &r.days).filter(|d| d.clamped).count(),
        unreachable: results
            .iter()
            .filter(|r| !r.unreachable.is_empty())
            .map(|r| (r.station_id.as_str(), r.unreachable.as_slice()))
            .collect(),
    };
    let summary_path = out.join("impute_summary.json");
    write_json(&summary_path, &summary)?;
    let mut inputs = dir.files.clone();
    inputs.extend([ckpt.to_path_buf(), corpus_path]);
    manifest::record(out, "impute", &cfg, &inputs, &[("imputed", table), ("impute_summary", summary_path)])?;
    let unreachable: usize = summary.unreachable.values().map(|v| v.len()).sum();
    println!("imputed {} days, {unreachable} unreachable", summary.imputed_days);
    Ok(())
}

#[derive(Serialize, Default)]
struct ErrorStats {
    count: usize,
    mae_kwh: f64,
    rmse_kwh: f64,
}

#[derive(Serialize)]
struct ProbStats {
    count: usize,
    /// Mean Gaussian negative log-likelihood in kWh units.
    nll: f64,
    crps_kwh: f64,
    /// `(alpha, coverage)` pairs of central intervals.
    coverage: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct EvalOutput {
    config: Config,
    overall: ErrorStats,
    stations: BTreeMap<String, ErrorStats>,
    probabilistic: Option<ProbStats>,
}

fn error_stats(pairs: &[(f64, f64)]) -> ErrorStats {
    let n = pairs.len() as f64;
    ErrorStats {
        count: pairs.len(),
        mae_kwh: pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
        rmse_kwh: (pairs.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt(),
    }
}

fn cmd_evaluate(cli: &Cli, pred: &Path, truth: &Path, out: &Path) -> Result<()> {
    let cfg = cli.config()?;
    let predictions = data::read_predictions(pred)?;
    let truth_series = data::read_series_file(truth)?;
    let mut known: BTreeMap<(&str, NaiveDate), f64> = BTreeMap::new();
    for s in &truth_series {
        for t in (0..s.len()).filter(|&t| !s.missing[t]) {
            known.insert((s.station_id.as_str(), s.date(t)), s.demand[t]);
        }
    }
    let mut pairs: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut prob: Vec<(f64, f64, f64)> = Vec::new();
    let mut scored = 0;
    for p in &predictions {
        if let Some(&t) = known.get(&(p.station_id.as_str(), p.date)) {
            pairs.entry(p.station_id.as_str()).or_default().push((p.value, t));
            scored += 1;
            if let Some(v) = p.variance.filter(|v| *v > 0.0) {
                prob.push((p.value, v, t));
            }
        }
    }
    if scored == 0 {
        anyhow::bail!("no prediction matches an observed day of {}", truth.display());
    }
    let all: Vec<(f64, f64)> = pairs.values().flatten().copied().collect();
    let probabilistic = (prob.len() == scored).then(|| {
        let n = prob.len() as f64;
        let nll = prob
            .iter()
            .map(|&(m, v, t)| 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (t - m).powi(2) / v))
            .sum::<f64>()
            / n;
        let crps = prob.iter().map(|&(m, v, t)| crps_gaussian(m, v.sqrt(), t)).sum::<f64>() / n;
        let (m, v, t): (Vec<f64>, Vec<f64>, Vec<f64>) = prob.iter().fold(Default::default(), |mut acc, &(m, v, t)| {
            acc.0.push(m);
            acc.1.push(v);
            acc.2.push(t);
            acc
        });
        let coverage = calibration_curve(&m, &v, &t, &cfg.eval.alphas).unwrap_or_default();
        ProbStats {
            count: prob.len(),
            nll,
            crps_kwh: crps,
            coverage,
        }
    });
    let output = EvalOutput {
        overall: error_stats(&all),
        stations: pairs.iter().map(|(k, v)| (k.to_string(), error_stats(v))).collect(),
        probabilistic,
        config: cfg.clone(),
    };
    fs::create_dir_all(out)?;
    let path = out.join("evaluation.json");
    write_json(&path, &output)?;
    manifest::record(out, "evaluate", &cfg, &[pred.to_path_buf(), truth.to_path_buf()], &[("evaluation", path)])?;
    println!("{} days scored, MAE {:.4} kWh", output.overall.count, output.overall.mae_kwh);
    Ok(())
}

fn bits(mask: &[bool]) -> String {
    mask.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

#[derive(Serialize)]
struct MaskRow<'a> {
    station_id: &'a str,
    date: NaiveDate,
    hidden: u8,
}

#[allow(clippy::too_many_arguments)]
fn cmd_maskgen(
    cli: &Cli,
    kind: KindArg,
    lambda: Option<f64>,
    window: Option<usize>,
    count: usize,
    series: Option<&Path>,
    fraction: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = cli.config()?;
    cfg.mask.kind = match kind {
        KindArg::Ls => MaskKind::Ls,
        KindArg::Dm => MaskKind::Dm,
    };
    if let Some(l) = lambda {
        cfg.mask.lambda = Some(l);
    }
    if let Some(w) = window {
        cfg.data.window_len = w;
    }
    if let Some(f) = fraction {
        cfg.mask.target_fraction = f;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let mut rng = seeds::rng(cfg.seed, "maskgen");
    match kind {
        KindArg::Ls => {
            let lambda = cfg.mask.lambda.ok_or_else(|| usage("uniform masks need --lambda"))?;
            let mut lines = Vec::with_capacity(count);
            for _ in 0..count {
                lines.push(bits(gen_mask_random(cfg.data.window_len, lambda, &mut rng)?.bits()));
            }
            if let Some(out) = out {
                fs::create_dir_all(out)?;
                let path = out.join("masks.txt");
                fs::write(&path, lines.join("\n") + "\n")?;
                manifest::record(out, "maskgen", &cfg, &[], &[("masks", path)])?;
            }
            for l in lines {
                println!("{l}");
            }
        }
        KindArg::Dm => {
            let series = series.ok_or_else(|| usage("distribution-matched masks need --series"))?;
            let dir = data::load_series_dir(series, cfg.poi.radius_km)?;
            let real: Vec<(NaiveDate, &[bool])> = dir.series.iter().map(|s| (s.start_date, s.missing.as_slice())).collect();
            let profile = fit_missingness_profile(&real).context("fitting the missingness profile")?;
            let mut masks = Vec::with_capacity(dir.series.len());
            for s in &dir.series {
                let m = gen_mask_dm(&profile, s.len(), s.start_date, cfg.mask.target_fraction, &mut rng)?;
                masks.push(m.mask);
            }
            match out {
                None => {
                    for (s, m) in dir.series.iter().zip(&masks) {
                        println!("{} {}", s.station_id, bits(m));
                    }
                }
                Some(out) => {
                    fs::create_dir_all(out)?;
                    let mask_path = out.join("masks.csv");
                    let mut w = csv::Writer::from_path(&mask_path)?;
                    for (s, m) in dir.series.iter().zip(&masks) {
                        for (t, &h) in m.iter().enumerate() {
                            w.serialize(MaskRow {
                                station_id: &s.station_id,
                                date: s.date(t),
                                hidden: h as u8,
                            })?;
                        }
                    }
                    w.flush()?;
                    // The gappy copy is itself a series directory.
                    let gappy: Vec<_> = dir
                        .series
                        .iter()
                        .zip(&masks)
                        .map(|(s, m)| {
                            let mut g = s.clone();
                            for (t, &h) in m.iter().enumerate() {
                                if h {
                                    g.missing[t] = true;
                                    g.demand[t] = 0.0;
                                }
                            }
                            g
                        })
                        .collect();
                    let series_path = out.join(data::SERIES);
                    data::write_series_file(&series_path, &gappy)?;
                    let mut artifacts = vec![("masks", mask_path), ("series", series_path)];
                    for (name, file) in [("stations", data::STATIONS), ("pois", data::POIS)] {
                        let src = series.join(file);
                        if src.exists() {
                            let dst = out.join(file);
                            fs::copy(&src, &dst)?;
                            artifacts.push((name, dst));
                        }
                    }
                    manifest::record(out, "maskgen", &cfg, &dir.files, &artifacts)?;
                    let hidden: usize = masks.iter().flatten().filter(|&&h| h).count();
                    println!("hid {hidden} days across {} stations", masks.len());
                }
            }
        }
    }
    Ok(())
}

fn cmd_report(cli: &Cli, ckpt: &Path, series: &Path, cache: Option<&Path>, out: &Path, plots: bool) -> Result<()> {
    let (model, cfg, stations) = load_checkpoint(cli, ckpt)?;
    let dir = data::load_series_dir(series, cfg.poi.radius_km)?;
    let template = cfg.embed.template(None)?;
    let provider = cfg.embed.provider(cfg.seed)?;
    let mut cache = open_cache(cache, cfg.embed.dim)?;
    let run = prepare_run(&cfg, &dir.series, &dir.contexts, provider.as_ref(), cache.as_mut(), &template)?;
    if run.stations != stations {
        anyhow::bail!("the series stations differ from the checkpoint's");
    }
    let imputer = Imputer {
        model: &model,
        stations: &run.stations,
        corpus: &run.corpus,
        provider: provider.as_ref(),
        contexts: &dir.contexts,
        template: &template,
        rag: cfg.rag,
    };
    let imputations = impute_all(&imputer, &dir.series)?;
    let mut report = EvaluationReport {
        config: serde_json::to_value(&cfg)?,
        windows: Some(window_evaluation(&cfg, &model, &run)?),
        ..Default::default()
    };
    gap_evaluation(&cfg, &dir.series, &imputations, &mut report)?;
    let mut files = report.write(out)?;
    if plots {
        files.extend(plots::write_plots(&report, out)?);
    }
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let artifacts: Vec<(&str, PathBuf)> = names.iter().map(String::as_str).zip(files.iter().cloned()).collect();
    let mut inputs = dir.files.clone();
    inputs.push(ckpt.to_path_buf());
    manifest::record(out, "report", &cfg, &inputs, &artifacts)?;
    if let Some(w) = &report.windows {
        if let Some(m) = w.overall_mae.get("model") {
            println!("test windows: model MAE {m:.3} kWh, CRPS {:.4}", w.prob.crps);
        }
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest {
            sessions,
            pois,
            out,
            threshold,
        } => cmd_ingest(cli, sessions, pois.as_deref(), out, *threshold),
        Command::Embed { series, cache } => cmd_embed(cli, series, cache),
        Command::Corpus { series, cache, out } => cmd_corpus(cli, series, cache.as_deref(), out),
        Command::Train { series, cache, out } => cmd_train(cli, series, cache.as_deref(), out),
        Command::Impute {
            checkpoint,
            series,
            corpus,
            out,
        } => cmd_impute(cli, checkpoint, series, corpus.as_deref(), out),
        Command::Evaluate { pred, truth, out } => cmd_evaluate(cli, pred, truth, out),
        Command::Maskgen {
            kind,
            lambda,
            window,
            count,
            series,
            fraction,
            out,
        } => cmd_maskgen(cli, *kind, *lambda, *window, *count, series.as_deref(), *fraction, out.as_deref()),
        Command::Prob {
            delta,
            lookback,
            horizon,
            neighbours,
        } => {
            cli.config()?;
            if !(0.0..=1.0).contains(delta) {
                return Err(usage("--delta must lie in [0, 1]"));
            }
            println!("{:.5}", usable_sample_probability(*delta, *lookback, *horizon, *neighbours));
            Ok(())
        }
        Command::Report {
            checkpoint,
            series,
            cache,
            out,
            plots,
        } => cmd_report(cli, checkpoint, series, cache.as_deref(), out, *plots),
    }
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(&cli) {
        if let Some(u) = e.downcast_ref::<Usage>() {
            eprintln!("error: {u}");
            std::process::exit(2);
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_key_parses_literals_and_nests() {
        let mut t = toml::Table::new();
        set_key(&mut t, "train.max_epochs", "20").unwrap();
        set_key(&mut t, "embed.provider", "remote").unwrap();
        set_key(&mut t, "mask.lambda", "0.3").unwrap();
        assert_eq!(t["train"]["max_epochs"].as_integer(), Some(20));
        assert_eq!(t["embed"]["provider"].as_str(), Some("remote"));
        assert_eq!(t["mask"]["lambda"].as_float(), Some(0.3));
        assert!(set_key(&mut t, "train.max_epochs.x", "1").is_err());
    }
}
