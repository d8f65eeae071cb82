//! Staged training: audio network, visual head, fusion heads, then joint
//! fine-tuning.

mod config;
pub mod crop;
mod features;
mod history;
pub mod mixup;
pub mod schedule;
mod stage;

pub use config::{Stage, TrainConfig};
pub use features::{backbone_fingerprint, FeatureCache};
pub use history::{EpochRecord, StopReason, TrainHistory, HISTORY_HEADER};
pub use stage::{cross_entropy, objective_heads, prepare_params, StageOutput, Trainer, WindowLoader};
