//! Minibatch optimization of the negative ELBO with early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::PreparedSample;
use super::optimizer::{AdamW, AdamWConfig};
use super::split::SplitMode;
use crate::error::{Error, TrainError};
use crate::model::{LossParts, Mode, Model, ModelConfig, Params};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// KL weight.
    pub theta: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub split_ratio: f64,
    pub split_mode: SplitMode,
    /// Latest fraction of each station's training windows held out for
    /// early stopping.
    pub val_fraction: f64,
    /// Fixed number of gradient partial sums per batch; results do not
    /// depend on the thread count.
    pub grad_chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            theta: 0.1,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            split_ratio: 0.8,
            split_mode: SplitMode::Random,
            val_fraction: 0.1,
            grad_chunks: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.theta >= 0.0) {
            return Err(TrainError::Config(format!("theta must be non-negative, got {}", self.theta)));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(TrainError::Ratio(self.split_ratio));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainError::Ratio(self.val_fraction));
        }
        if self.batch_size == 0 || self.grad_chunks == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config(
                "batch_size, grad_chunks and max_epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(TrainError::Config("learning_rate must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_elbo: f64,
    pub train_rec: f64,
    pub train_kl: f64,
    pub val_elbo: Option<f64>,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best epoch, rounded to `f32`.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub stopped_early: bool,
}

pub fn init_model(config: ModelConfig, seed: u64) -> crate::Result<Model> {
    Ok(Model::new(config, &mut seeds::rng(seed, "init"))?)
}

fn eps_for(model: &Model, seed: u64, epoch: usize, sample: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, "eps", &[epoch as u64, sample as u64]));
    model.draw_eps(&mut rng)
}

#[derive(Default, Clone, Copy)]
struct Sums {
    elbo: f64,
    recon: f64,
    kl: f64,
}

impl Sums {
    fn add(&mut self, p: LossParts) {
        self.elbo += p.elbo;
        self.recon += p.recon;
        self.kl += p.kl;
    }
}

/// Summed loss and gradient over `batch` (indices into `data`).
fn batch_gradient(
    model: &Model,
    data: &[PreparedSample],
    batch: &[usize],
    epoch: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> crate::Result<(Params, Sums)> {
    let chunk = batch.len().div_ceil(cfg.grad_chunks);
    let partials: Vec<crate::Result<(Params, Sums)>> = batch
        .par_chunks(chunk)
        .map(|ids| {
            let mut g = model.params.zeros_like();
            let mut s = Sums::default();
            for &i in ids {
                let eps = eps_for(model, seed, epoch, i);
                let p = &data[i];
                let parts = model.loss_and_grad(&p.input(), Mode::Stochastic(&eps), &p.targets(), cfg.theta, &mut g)?;
                s.add(parts);
            }
            Ok((g, s))
        })
        .collect();
    let mut iter = partials.into_iter();
    let (mut grad, mut sums) = iter.next().expect("non-empty batch")?;
    for part in iter {
        let (g, s) = part?;
        grad.add_assign(&g);
        sums.elbo += s.elbo;
        sums.recon += s.recon;
        sums.kl += s.kl;
    }
    Ok((grad, sums))
}

/// Mean deterministic ELBO over `data`.
pub fn evaluate_elbo(model: &Model, data: &[PreparedSample], theta: f64) -> crate::Result<LossParts> {
    let parts: Vec<crate::Result<LossParts>> = data
        .par_iter()
        .map(|p| model.loss(&p.input(), Mode::Deterministic, &p.targets(), theta))
        .collect();
    let mut s = Sums::default();
    for p in parts {
        s.add(p?);
    }
    let n = data.len().max(1) as f64;
    Ok(LossParts {
        elbo: s.elbo / n,
        recon: s.recon / n,
        kl: s.kl / n,
    })
}

/// Trains `model` in place of a copy and returns the best-validation state.
pub fn train(
    mut model: Model,
    train_set: &[PreparedSample],
    val_set: &[PreparedSample],
    cfg: &TrainConfig,
    seed: u64,
) -> crate::Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet.into());
    }
    if val_set.is_empty() {
        log::warn!("validation slice is empty; early stopping falls back to the training loss");
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
        &model.params,
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stale = 0usize;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive_indexed(seed, "order", &[epoch as u64])));
        let mut sums = Sums::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let nonfinite = || Error::from(TrainError::NonFiniteLoss { epoch, batch: b });
            let (mut grad, s) = match batch_gradient(&model, train_set, batch, epoch, seed, cfg) {
                Ok(r) => r,
                Err(Error::Model(crate::error::ModelError::NonFinite(_))) => return Err(nonfinite()),
                Err(e) => return Err(e),
            };
            if !s.elbo.is_finite() || !grad.is_finite() {
                return Err(nonfinite());
            }
            grad.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &grad);
            sums.elbo += s.elbo;
            sums.recon += s.recon;
            sums.kl += s.kl;
        }
        let n = train_set.len() as f64;
        let val_elbo = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_elbo(&model, val_set, cfg.theta)?.elbo)
        };
        let score = val_elbo.unwrap_or(sums.elbo / n);
        if !score.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 }.into());
        }
        log.push(EpochLog {
            epoch,
            train_elbo: sums.elbo / n,
            train_rec: sums.recon / n,
            train_kl: sums.kl / n,
            val_elbo,
            lr: cfg.learning_rate,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if score < best.0 {
            best = (score, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_score, best_epoch, mut params) = best;
    params.quantize_f32();
    Ok(TrainOutcome {
        model: Model::from_parts(model.config.clone(), params),
        log,
        best_epoch,
        best_score,
        stopped_early,
    })
}
