//! Imputation of real gaps and the metrics used to judge it.

pub mod distribution;
pub mod fidelity;
pub mod forecast;
pub mod impute;
pub mod metrics;
pub mod report;
pub mod windows;

pub use distribution::{dist_compare, dow_profile_and_qq, wasserstein1, DistributionReport, DowQq};
pub use fidelity::{mask_fidelity, MaskFidelityReport};
pub use forecast::{forecast_impact, ForecastConfig, ForecastImpact, ForecastSeries};
pub use impute::{predict_windows, ImputationResult, ImputedDay, Imputer};
pub use metrics::{calibration_curve, crps_gaussian, mae, prob_metrics, ProbMetrics, DEFAULT_ALPHAS};
pub use report::{EvaluationReport, StationReport};
pub use windows::{evaluate_windows, WindowEvaluation, MODEL_NAME};
