use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ModelConfig;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    fn fan_in<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }

    fn normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("valid std");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| dist.sample(rng)).collect(),
        }
    }
}

/// Affine map `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            w: Tensor::fan_in(&[output, input], input, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    fn new(dim: usize) -> Self {
        LayerNormParams {
            gain: Tensor::filled(&[dim], 1.0),
            bias: Tensor::zeros(&[dim]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub norm_attn: LayerNormParams,
    /// Per-head projections are column blocks of these `[d, d]` maps.
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub norm_ff: LayerNormParams,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

/// Every trainable tensor of the network. Gradients and optimizer moments
/// reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub gate: Linear,
    pub latent_mean: Linear,
    pub latent_logvar: Linear,
    pub station_table: Tensor,
    pub calendar_proj: Linear,
    pub cond1: Linear,
    pub cond2: Linear,
    pub lift_w: Tensor,
    pub lift_b: Tensor,
    pub layers: Vec<LayerParams>,
    pub norm_out: LayerNormParams,
    pub mean_head: Linear,
    pub logvar_head: Linear,
}

impl Params {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_film;
        let cond_in = cfg.d_lat + cfg.d_stat + cfg.d_cal;
        Params {
            gate: Linear::init(2 * cfg.d_emb, cfg.d_emb, rng),
            latent_mean: Linear::init(cfg.d_emb, cfg.d_lat, rng),
            latent_logvar: Linear::init(cfg.d_emb, cfg.d_lat, rng),
            station_table: Tensor::normal(&[cfg.n_stations, cfg.d_stat], 0.02, rng),
            calendar_proj: Linear::init(6, cfg.d_cal, rng),
            cond1: Linear::init(cond_in, 2 * d, rng),
            cond2: Linear::init(2 * d, 2 * d, rng),
            // A scalar lift has fan-in 1.
            lift_w: Tensor::fan_in(&[d], 1, rng),
            lift_b: Tensor::zeros(&[d]),
            layers: (0..cfg.n_layers)
                .map(|_| LayerParams {
                    norm_attn: LayerNormParams::new(d),
                    query: Linear::init(d, d, rng),
                    key: Linear::init(d, d, rng),
                    value: Linear::init(d, d, rng),
                    attn_out: Linear::init(d, d, rng),
                    norm_ff: LayerNormParams::new(d),
                    ff_in: Linear::init(d, 4 * d, rng),
                    ff_out: Linear::init(4 * d, d, rng),
                })
                .collect(),
            norm_out: LayerNormParams::new(d),
            mean_head: Linear::init(d, 1, rng),
            logvar_head: Linear::init(d, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|_, t| t.data.iter_mut().for_each(|v| *v = 0.0));
        out
    }

    /// Visits tensors in a fixed order with stable dotted names.
    pub fn for_each(&self, mut f: impl FnMut(&str, &Tensor)) {
        let visit_linear = |f: &mut dyn FnMut(&str, &Tensor), name: &str, l: &Linear| {
            f(&format!("{name}.weight"), &l.w);
            f(&format!("{name}.bias"), &l.b);
        };
        visit_linear(&mut f, "fusion.gate", &self.gate);
        visit_linear(&mut f, "latent.mean", &self.latent_mean);
        visit_linear(&mut f, "latent.logvar", &self.latent_logvar);
        f("film.station_table", &self.station_table);
        visit_linear(&mut f, "film.calendar_proj", &self.calendar_proj);
        visit_linear(&mut f, "film.cond1", &self.cond1);
        visit_linear(&mut f, "film.cond2", &self.cond2);
        f("decoder.lift.weight", &self.lift_w);
        f("decoder.lift.bias", &self.lift_b);
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("decoder.layers.{i}");
            f(&format!("{p}.norm_attn.gain"), &layer.norm_attn.gain);
            f(&format!("{p}.norm_attn.bias"), &layer.norm_attn.bias);
            visit_linear(&mut f, &format!("{p}.query"), &layer.query);
            visit_linear(&mut f, &format!("{p}.key"), &layer.key);
            visit_linear(&mut f, &format!("{p}.value"), &layer.value);
            visit_linear(&mut f, &format!("{p}.attn_out"), &layer.attn_out);
            f(&format!("{p}.norm_ff.gain"), &layer.norm_ff.gain);
            f(&format!("{p}.norm_ff.bias"), &layer.norm_ff.bias);
            visit_linear(&mut f, &format!("{p}.ff_in"), &layer.ff_in);
            visit_linear(&mut f, &format!("{p}.ff_out"), &layer.ff_out);
        }
        f("decoder.norm_out.gain", &self.norm_out.gain);
        f("decoder.norm_out.bias", &self.norm_out.bias);
        visit_linear(&mut f, "decoder.mean_head", &self.mean_head);
        visit_linear(&mut f, "decoder.logvar_head", &self.logvar_head);
    }

    /// Mutable counterpart of [`Params::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        let visit_linear = |f: &mut dyn FnMut(&str, &mut Tensor), name: &str, l: &mut Linear| {
            f(&format!("{name}.weight"), &mut l.w);
            f(&format!("{name}.bias"), &mut l.b);
        };
        visit_linear(&mut f, "fusion.gate", &mut self.gate);
        visit_linear(&mut f, "latent.mean", &mut self.latent_mean);
        visit_linear(&mut f, "latent.logvar", &mut self.latent_logvar);
        f("film.station_table", &mut self.station_table);
        visit_linear(&mut f, "film.calendar_proj", &mut self.calendar_proj);
        visit_linear(&mut f, "film.cond1", &mut self.cond1);
        visit_linear(&mut f, "film.cond2", &mut self.cond2);
        f("decoder.lift.weight", &mut self.lift_w);
        f("decoder.lift.bias", &mut self.lift_b);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("decoder.layers.{i}");
            f(&format!("{p}.norm_attn.gain"), &mut layer.norm_attn.gain);
            f(&format!("{p}.norm_attn.bias"), &mut layer.norm_attn.bias);
            visit_linear(&mut f, &format!("{p}.query"), &mut layer.query);
            visit_linear(&mut f, &format!("{p}.key"), &mut layer.key);
            visit_linear(&mut f, &format!("{p}.value"), &mut layer.value);
            visit_linear(&mut f, &format!("{p}.attn_out"), &mut layer.attn_out);
            f(&format!("{p}.norm_ff.gain"), &mut layer.norm_ff.gain);
            f(&format!("{p}.norm_ff.bias"), &mut layer.norm_ff.bias);
            visit_linear(&mut f, &format!("{p}.ff_in"), &mut layer.ff_in);
            visit_linear(&mut f, &format!("{p}.ff_out"), &mut layer.ff_out);
        }
        f("decoder.norm_out.gain", &mut self.norm_out.gain);
        f("decoder.norm_out.bias", &mut self.norm_out.bias);
        visit_linear(&mut f, "decoder.mean_head", &mut self.mean_head);
        visit_linear(&mut f, "decoder.logvar_head", &mut self.logvar_head);
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each(|n, _| names.push(n.to_string()));
        names
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, t| n += t.len());
        n
    }

    /// All values concatenated in visiting order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        self.for_each(|_, t| out.extend_from_slice(&t.data));
        out
    }

    /// Inverse of [`Params::flatten`].
    pub fn assign(&mut self, flat: &[f64]) {
        let mut pos = 0;
        self.for_each_mut(|_, t| {
            let n = t.len();
            t.data.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        });
        assert_eq!(pos, flat.len(), "flat parameter length mismatch");
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Params) {
        let flat = other.flatten();
        let mut pos = 0;
        self.for_each_mut(|_, t| {
            for v in t.data.iter_mut() {
                *v += flat[pos];
                pos += 1;
            }
        });
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, t| t.data.iter_mut().for_each(|v| *v *= factor));
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|_, t| ok &= t.data.iter().all(|v| v.is_finite()));
        ok
    }

    /// Rounds every value to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        self.for_each_mut(|_, t| t.data.iter_mut().for_each(|v| *v = *v as f32 as f64));
    }
}
