//! Mask generation, dataset assembly, the ELBO objective and the optimizer
//! loop.

pub mod dataset;
pub mod loss;
pub mod masks;
pub mod optimizer;
pub mod split;
pub mod trainer;

pub use dataset::{
    build_samples, prepare_samples, prompt_items, retrieval_context, sample_key, window_mask, window_prompt, MaskRatio,
    PreparedSample, RagOptions, StationIndex,
};
pub use loss::{elbo_loss, kl_loss, recon_loss};
pub use masks::{
    fit_missingness_profile, gap_runs, gen_mask_dm, gen_mask_ls_matched, gen_mask_random, gen_mask_random_series, masked_count, DmMask,
    MissingnessProfile, LAMBDA_GRID,
};
pub use optimizer::{AdamW, AdamWConfig};
pub use split::{split_dataset, split_indices, train_size, validation_slice, SplitMode};
pub use trainer::{evaluate_elbo, init_model, train, EpochLog, TrainConfig, TrainOutcome};
