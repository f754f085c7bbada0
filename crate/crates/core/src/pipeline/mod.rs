//! Training and ten-repetition inference around the point network.

mod config;
mod infer;
mod prepare;
mod train;

pub use config::{InferenceConfig, TrainConfig};
pub use infer::{infer, majority_vote, refine_case, InferenceResult, RefinementReport};
pub use prepare::{prepare_case, PreparedCase};
pub use train::{train, write_training_log, EpochRecord, TrainingCase, TrainingOutcome};
