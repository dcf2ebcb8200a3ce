//! The imputation network: retrieval fusion, variational latent, FiLM
//! conditioning and a masked transformer decoder with Gaussian heads.
//!
//! Everything runs in `f64` with hand-written backward passes.

pub mod checkpoint;
mod decoder;
mod film;
mod fusion;
mod latent;
mod ops;
mod params;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::training::loss::{elbo_loss, kl_loss, recon_loss};

pub use decoder::{decode, DecoderTrace, MASK_LOGIT, VAR_MAX, VAR_MIN};
pub use film::{condition, modulate, Film};
pub use fusion::{attend, fuse_context, gate_fuse, Fused};
pub use latent::{encode_latent, sample_latent, Latent};
pub use ops::positional_encoding;
pub use params::{LayerNormParams, LayerParams, Linear, Params, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_lat: usize,
    pub d_stat: usize,
    pub d_cal: usize,
    pub d_film: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub window_len: usize,
    /// Size of the station table; set from the data.
    pub n_stations: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_emb: 4096,
            d_lat: 256,
            d_stat: 32,
            d_cal: 32,
            d_film: 256,
            n_layers: 4,
            n_heads: 8,
            window_len: 7,
            n_stations: 1,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks.
    pub fn tiny(n_stations: usize) -> Self {
        ModelConfig {
            d_emb: 8,
            d_lat: 4,
            d_stat: 4,
            d_cal: 4,
            d_film: 8,
            n_layers: 1,
            n_heads: 2,
            window_len: 4,
            n_stations,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if [self.d_emb, self.d_lat, self.d_stat, self.d_cal, self.d_film, self.n_heads, self.n_stations]
            .contains(&0)
        {
            return bad("all widths, the head count and the station count must be positive");
        }
        if self.d_film % self.n_heads != 0 {
            return bad("d_film must be divisible by n_heads");
        }
        if self.window_len < 2 {
            return bad("window_len must be at least 2");
        }
        Ok(())
    }
}

/// Per-step Gaussian over normalized demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSequence {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Everything one forward pass needs for a single window.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub query: &'a [f64],
    /// Neighbour summary from [`attend`].
    pub context: &'a [f64],
    pub station: usize,
    pub calendar: &'a [f64],
    /// Normalized demand; entries under `mask` are ignored.
    pub values: &'a [f64],
    /// `true` marks a hidden step.
    pub mask: &'a [bool],
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    /// Latent set to its mean.
    Deterministic,
    /// Latent drawn as `mean + std * eps`.
    Stochastic(&'a [f64]),
}

/// Full activation record of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub gate: Vec<f64>,
    pub fused: Vec<f64>,
    pub latent: Latent,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    pub film: Film,
    pub values: Vec<f64>,
    pub decoder: DecoderTrace,
    pub output: GaussianSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pe: Vec<f64>,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Params::init(&config, rng);
        Ok(Self::from_parts(config, params))
    }

    pub fn from_parts(config: ModelConfig, params: Params) -> Self {
        let pe = positional_encoding(config.window_len, config.d_film);
        Model { config, params, pe }
    }

    pub fn positional_table(&self) -> &[f64] {
        &self.pe
    }

    pub fn draw_eps<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.config.d_lat).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        let c = &self.config;
        let checks = [
            ("query", c.d_emb, input.query.len()),
            ("context", c.d_emb, input.context.len()),
            ("calendar", 6, input.calendar.len()),
            ("values", c.window_len, input.values.len()),
            ("mask", c.window_len, input.mask.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(ModelError::Shape { what, expected, got });
            }
        }
        if input.mask.iter().all(|&m| m) {
            return Err(ModelError::AllMasked);
        }
        Ok(())
    }

    pub fn forward_traced(&self, input: &ModelInput, mode: Mode) -> Result<ForwardTrace, ModelError> {
        self.check_input(input)?;
        let p = &self.params;
        let (gate, fused) = gate_fuse(input.query, input.context, &p.gate)?;
        let latent = encode_latent(&fused, &p.latent_mean, &p.latent_logvar)?;
        let eps = match mode {
            Mode::Deterministic => vec![0.0; self.config.d_lat],
            Mode::Stochastic(e) => {
                if e.len() != self.config.d_lat {
                    return Err(ModelError::Shape {
                        what: "eps",
                        expected: self.config.d_lat,
                        got: e.len(),
                    });
                }
                e.to_vec()
            }
        };
        let z = match mode {
            Mode::Deterministic => latent.mean.clone(),
            Mode::Stochastic(_) => sample_latent(&latent.mean, &latent.std, &eps),
        };
        let film = condition(&z, input.station, input.calendar, p)?;
        let values: Vec<f64> = input
            .values
            .iter()
            .zip(input.mask)
            .map(|(v, &m)| if m { 0.0 } else { *v })
            .collect();
        let x = modulate(&values, &film.gamma, &film.beta, &p.lift_w.data, &p.lift_b.data, &self.pe);
        let (output, decoder) = decode(&x, input.mask, p, self.config.n_heads)?;
        Ok(ForwardTrace {
            gate,
            fused,
            latent,
            eps,
            z,
            film,
            values,
            decoder,
            output,
        })
    }

    pub fn forward(&self, input: &ModelInput, mode: Mode) -> Result<GaussianSequence, ModelError> {
        Ok(self.forward_traced(input, mode)?.output)
    }

    /// Negative ELBO over the `targets` (step, normalized truth) and its
    /// gradient, accumulated into `grad`.
    pub fn loss_and_grad(
        &self,
        input: &ModelInput,
        mode: Mode,
        targets: &[(usize, f64)],
        theta: f64,
        grad: &mut Params,
    ) -> crate::Result<LossParts> {
        let tr = self.forward_traced(input, mode)?;
        let parts = self.loss_from_trace(&tr, targets, theta)?;
        let p = &self.params;
        let out = &tr.output;
        let n = targets.len() as f64;
        let len = self.config.window_len;
        let mut d_mean = vec![0.0; len];
        let mut d_var = vec![0.0; len];
        for &(t, x) in targets {
            let r = x - out.mean[t];
            let v = out.variance[t];
            d_mean[t] += -r / v / n;
            d_var[t] += (-r * r / (2.0 * v * v) + 0.5 / v) / n;
        }
        let dx = decoder::decode_backward(&tr.decoder, p, &d_mean, &d_var, grad);
        let (d_gamma, d_beta) = film::modulate_backward(&tr.values, &tr.film.gamma, p, &dx, grad);
        let dz = film::condition_backward(&tr.film, &d_gamma, &d_beta, p, grad);
        let lat = &tr.latent;
        let d_mu: Vec<f64> = dz.iter().zip(&lat.mean).map(|(g, m)| g + theta * m).collect();
        let d_lv: Vec<f64> = (0..dz.len())
            .map(|j| {
                let sample = dz[j] * tr.eps[j] * 0.5 * lat.std[j];
                sample + theta * 0.5 * (lat.logvar[j].exp() - 1.0)
            })
            .collect();
        let d_fused = latent::latent_backward(
            &tr.fused,
            lat,
            &d_mu,
            &d_lv,
            (&p.latent_mean, &p.latent_logvar),
            (&mut grad.latent_mean, &mut grad.latent_logvar),
        );
        fusion::gate_backward(input.query, input.context, &tr.gate, &d_fused, &p.gate, &mut grad.gate);
        Ok(parts)
    }

    /// Loss value only.
    pub fn loss(&self, input: &ModelInput, mode: Mode, targets: &[(usize, f64)], theta: f64) -> crate::Result<LossParts> {
        let tr = self.forward_traced(input, mode)?;
        self.loss_from_trace(&tr, targets, theta)
    }

    fn loss_from_trace(&self, tr: &ForwardTrace, targets: &[(usize, f64)], theta: f64) -> crate::Result<LossParts> {
        let xs: Vec<f64> = targets.iter().map(|t| t.1).collect();
        let mu: Vec<f64> = targets.iter().map(|t| tr.output.mean[t.0]).collect();
        let var: Vec<f64> = targets.iter().map(|t| tr.output.variance[t.0]).collect();
        let recon = recon_loss(&xs, &mu, &var)?;
        let kl = kl_loss(&tr.latent.mean, &tr.latent.std)?;
        Ok(LossParts {
            elbo: elbo_loss(recon, kl, theta),
            recon,
            kl,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Case {
        query: Vec<f64>,
        context: Vec<f64>,
        calendar: Vec<f64>,
        values: Vec<f64>,
        mask: Vec<bool>,
    }

    fn case(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Case {
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        Case {
            query: v(cfg.d_emb),
            context: v(cfg.d_emb),
            calendar: v(6),
            values: v(cfg.window_len),
            mask: vec![false, true, false, true],
        }
    }

    fn input<'a>(c: &'a Case, station: usize) -> ModelInput<'a> {
        ModelInput {
            query: &c.query,
            context: &c.context,
            station,
            calendar: &c.calendar,
            values: &c.values,
            mask: &c.mask,
        }
    }

    #[test]
    fn deterministic_is_repeatable_and_matches_zero_eps() {
        let cfg = ModelConfig::tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Model::new(cfg.clone(), &mut rng).unwrap();
        let c = case(&mut rng, &cfg);
        let a = m.forward(&input(&c, 1), Mode::Deterministic).unwrap();
        let b = m.forward(&input(&c, 1), Mode::Deterministic).unwrap();
        assert_eq!(a, b);
        let zero = vec![0.0; cfg.d_lat];
        assert_eq!(a, m.forward(&input(&c, 1), Mode::Stochastic(&zero)).unwrap());
    }

    #[test]
    fn masked_values_do_not_reach_the_output() {
        let cfg = ModelConfig::tiny(1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = Model::new(cfg.clone(), &mut rng).unwrap();
        let mut c = case(&mut rng, &cfg);
        let before = m.forward(&input(&c, 0), Mode::Deterministic).unwrap();
        c.values[1] = 1e6;
        c.values[3] = -42.0;
        let after = m.forward(&input(&c, 0), Mode::Deterministic).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::tiny(1);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn one_small_step_decreases_the_loss() {
        let cfg = ModelConfig::tiny(1);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut m = Model::new(cfg.clone(), &mut rng).unwrap();
        let c = case(&mut rng, &cfg);
        let eps = m.draw_eps(&mut rng);
        let targets = [(1, 0.7), (3, -0.4)];
        let mut g = m.params.zeros_like();
        let before = m
            .loss_and_grad(&input(&c, 0), Mode::Stochastic(&eps), &targets, 0.1, &mut g)
            .unwrap();
        g.scale(-1e-3);
        m.params.add_assign(&g);
        let after = m.loss(&input(&c, 0), Mode::Stochastic(&eps), &targets, 0.1).unwrap();
        assert!(after.elbo < before.elbo);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let cfg = ModelConfig::tiny(2);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = Model::new(cfg.clone(), &mut rng).unwrap();
        let c = case(&mut rng, &cfg);
        let eps = m.draw_eps(&mut rng);
        let targets = [(1, 0.7), (3, -0.4)];
        let mut g = m.params.zeros_like();
        m.loss_and_grad(&input(&c, 1), Mode::Stochastic(&eps), &targets, 0.1, &mut g)
            .unwrap();
        let analytic = g.flatten();
        let base = m.params.flatten();
        let mut probe = m.clone();
        let h = 1e-5;
        let mut pos = 0;
        let mut sizes = Vec::new();
        m.params.for_each(|n, t| sizes.push((n.to_string(), t.len())));
        for (name, n) in sizes {
            let mut diff = 0.0;
            let mut norm_a = 0.0;
            let mut norm_f = 0.0;
            for i in pos..pos + n {
                let mut plus = base.clone();
                plus[i] += h;
                probe.params.assign(&plus);
                let lp = probe.loss(&input(&c, 1), Mode::Stochastic(&eps), &targets, 0.1).unwrap().elbo;
                plus[i] -= 2.0 * h;
                probe.params.assign(&plus);
                let lm = probe.loss(&input(&c, 1), Mode::Stochastic(&eps), &targets, 0.1).unwrap().elbo;
                let fd = (lp - lm) / (2.0 * h);
                diff += (fd - analytic[i]).powi(2);
                norm_a += analytic[i].powi(2);
                norm_f += fd.powi(2);
            }
            pos += n;
            let denom = norm_a.sqrt().max(norm_f.sqrt());
            if denom < 1e-9 {
                continue;
            }
            let rel = diff.sqrt() / denom;
            assert!(rel < 1e-4, "{name}: relative error {rel}");
        }
    }
}
