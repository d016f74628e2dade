//! Two-phase sequential training, evaluation, segmentation and ablations.

mod ablate;
mod adam;
mod config;
mod eval;
mod run;

pub use ablate::{ablate, default_grid, AblationCell, AblationRow, AblationTable, InputMode};
pub use adam::Adam;
pub use config::{OptimizerConfig, OptimizerKind, Schedule, TrainConfig};
pub use eval::{case_metrics, evaluate, evaluate_with, predict_logits, predict_masks, segment, threshold_logits};
pub use run::{
    param_hash, sequences_of, train_step, train_tps, EpochRecord, Phase, RunRecord, StopReason, TrainData,
    TrainOutcome,
};
