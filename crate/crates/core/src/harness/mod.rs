//! Training loop, checkpoints, evaluation, ablations and diagnostics.

mod ablate;
pub mod checkpoint;
mod config;
mod evaluate;
pub mod plot;
mod train;

pub use ablate::AblationAxis;
pub use config::{config_diff, DataConfig, OptimConfig, RunConfig, SnrMode, SEED_ENV};
pub use evaluate::{composite, evaluate, evaluate_clip, ClipPredictor, ModelPredictor, Prediction, SI_SDR_NORM_DB};
pub use train::{adam_config, EpochRecord, StepInfo, Trainer, ValSummary};
