//! Run configuration, read from a TOML file.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Unknown keys are rejected to catch typos.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineKind;
use crate::error::Error;
use crate::evaluation::{ForecastConfig, DEFAULT_ALPHAS};
use crate::model::ModelConfig;
use crate::prompting::{EmbeddingProvider, PromptTemplate, RemoteEmbedder, StubEmbedder, DEFAULT_TEMPLATE};
use crate::seeds;
use crate::training::dataset::{MaskRatio, RagOptions};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub window_len: usize,
    /// Stations whose missing-day fraction is strictly above this are
    /// dropped.
    pub missing_threshold: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            window_len: 7,
            missing_threshold: 0.35,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// Uniform random positions at ratio `lambda`.
    #[default]
    Ls,
    /// Gap blocks matched to a fitted missingness profile.
    Dm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    /// Generator used by `maskgen` and for gap injection. Training windows
    /// always use uniform random masks.
    pub kind: MaskKind,
    /// Fixed masking ratio; absent means one ratio per window drawn from
    /// 0.1, 0.2, .., 0.9.
    pub lambda: Option<f64>,
    /// Share of days hidden by the distribution-matched generator.
    pub target_fraction: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            kind: MaskKind::Ls,
            lambda: None,
            target_fraction: 0.2,
        }
    }
}

impl MaskConfig {
    pub fn ratio(&self) -> MaskRatio {
        self.lambda.map_or(MaskRatio::Sweep, MaskRatio::Fixed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Stub,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub dim: usize,
    pub batch_size: usize,
    pub max_inflight: usize,
    pub retries: u32,
    pub timeout_secs: u64,
    /// Environment variable holding the API credential.
    pub api_key_env: Option<String>,
    /// Prompt template file; the built-in template when absent.
    pub template: Option<String>,
    pub max_pois: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            provider: ProviderKind::Stub,
            endpoint: "http://127.0.0.1:8080/v1/embeddings".into(),
            model: "text-embedding".into(),
            dim: 4096,
            batch_size: 32,
            max_inflight: 4,
            retries: 3,
            timeout_secs: 60,
            api_key_env: None,
            template: None,
            max_pois: 10,
        }
    }
}

impl EmbedConfig {
    pub fn provider(&self, root_seed: u64) -> crate::Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.provider {
            ProviderKind::Stub => Box::new(StubEmbedder::new(self.dim, seeds::derive(root_seed, "stub-embedder"))),
            ProviderKind::Remote => {
                let mut r = RemoteEmbedder::new(&self.endpoint, &self.model, self.dim, None);
                r.batch_size = self.batch_size.max(1);
                r.max_inflight = self.max_inflight.max(1);
                r.retries = self.retries;
                r.timeout = std::time::Duration::from_secs(self.timeout_secs);
                if let Some(var) = &self.api_key_env {
                    r = r.with_key_from_env(var)?;
                }
                Box::new(r)
            }
        })
    }

    /// Relative template paths resolve against `base`.
    pub fn template(&self, base: Option<&Path>) -> crate::Result<PromptTemplate> {
        let text = match &self.template {
            None => DEFAULT_TEMPLATE.to_string(),
            Some(p) => {
                let path = match base {
                    Some(b) if Path::new(p).is_relative() => b.join(p),
                    _ => p.into(),
                };
                std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("template {}: {e}", path.display())))?
            }
        };
        Ok(PromptTemplate::parse(&text, self.max_pois))
    }
}

/// Network sizes; the embedding width comes from `[embed].dim` and the
/// station count from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_lat: usize,
    pub d_stat: usize,
    pub d_cal: usize,
    pub d_film: usize,
    pub n_layers: usize,
    pub n_heads: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            d_lat: m.d_lat,
            d_stat: m.d_stat,
            d_cal: m.d_cal,
            d_film: m.d_film,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoiConfig {
    pub radius_km: f64,
    /// Remote geodata endpoint; the local PoI file is used when absent.
    pub endpoint: Option<String>,
    pub retries: u32,
}

impl Default for PoiConfig {
    fn default() -> Self {
        PoiConfig {
            radius_km: 2.0,
            endpoint: None,
            retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Imputer used when a single reference is needed.
    pub kind: BaselineKind,
    /// Imputers scored next to the model.
    pub compare: Vec<BaselineKind>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kind: BaselineKind::Interpolation,
            compare: vec![
                BaselineKind::Mean,
                BaselineKind::Zero,
                BaselineKind::LastObserved,
                BaselineKind::Interpolation,
                BaselineKind::Knn { k: 5 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub alphas: Vec<f64>,
    pub horizon: usize,
    pub lookback: usize,
    pub ridge_lambda: f64,
    pub forecast_eval_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let f = ForecastConfig::default();
        EvalConfig {
            alphas: DEFAULT_ALPHAS.to_vec(),
            horizon: f.horizon,
            lookback: f.lookback,
            ridge_lambda: f.ridge_lambda,
            forecast_eval_fraction: f.eval_fraction,
        }
    }
}

impl EvalConfig {
    pub fn forecast(&self) -> ForecastConfig {
        ForecastConfig {
            horizon: self.horizon,
            lookback: self.lookback,
            ridge_lambda: self.ridge_lambda,
            eval_fraction: self.forecast_eval_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub data: DataConfig,
    pub mask: MaskConfig,
    pub embed: EmbedConfig,
    pub rag: RagOptions,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub poi: PoiConfig,
    pub baseline: BaselineConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            data: DataConfig::default(),
            mask: MaskConfig::default(),
            embed: EmbedConfig::default(),
            rag: RagOptions::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            poi: PoiConfig::default(),
            baseline: BaselineConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> crate::Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> crate::Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let Some(l) = self.mask.lambda {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("mask.lambda must lie in (0, 1), got {l}")));
            }
        }
        if !(0.0..=1.0).contains(&self.data.missing_threshold) {
            return Err(Error::Config("data.missing_threshold must lie in [0, 1]".into()));
        }
        if self.rag.k == 0 {
            return Err(Error::Config("rag.k must be positive".into()));
        }
        if self.eval.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::Config("eval.alphas must lie in (0, 1)".into()));
        }
        self.train.validate()?;
        self.model_config(1).validate()?;
        Ok(())
    }

    pub fn model_config(&self, n_stations: usize) -> ModelConfig {
        ModelConfig {
            d_emb: self.embed.dim,
            d_lat: self.model.d_lat,
            d_stat: self.model.d_stat,
            d_cal: self.model.d_cal,
            d_film: self.model.d_film,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            window_len: self.data.window_len,
            n_stations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.rag.k, 20);
        assert_eq!(c.data.window_len, 7);
        assert_eq!(c.embed.dim, 4096);
        assert_eq!(c.train.theta, 0.1);
        assert_eq!(c.data.missing_threshold, 0.35);
        assert_eq!(c.poi.radius_km, 2.0);
        let m = c.model_config(3);
        assert_eq!((m.d_lat, m.d_stat, m.d_cal, m.d_film, m.n_layers, m.n_heads), (256, 32, 32, 256, 4, 8));
    }

    #[test]
    fn round_trips_and_rejects_typos() {
        let mut c = Config::default();
        c.seed = 7;
        c.mask.lambda = Some(0.3);
        c.baseline.kind = BaselineKind::Knn { k: 3 };
        c.eval.ridge_lambda = 0.5;
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        assert!(Config::from_toml("[train]\nthetaa = 1.0\n").is_err());
        assert!(Config::from_toml("[mask]\nlambda = 1.5\n").is_err());
        let parsed = Config::from_toml("seed = 3\n[embed]\ndim = 64\nprovider = \"stub\"\n[eval]\nhorizon = 2\n").unwrap();
        assert_eq!(parsed.embed.dim, 64);
        assert_eq!(parsed.eval.forecast().horizon, 2);
        assert_eq!(parsed.mask.ratio(), MaskRatio::Sweep);
    }
}
