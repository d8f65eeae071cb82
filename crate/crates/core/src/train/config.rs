use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training stages, run in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Audio network from scratch.
    Audio,
    /// Visual GRU head on a frozen backbone.
    Visual,
    /// Fusion heads on frozen audio and visual networks.
    Fusion,
    /// Everything trainable at a small learning rate.
    Finetune,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Audio, Stage::Visual, Stage::Fusion, Stage::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Audio => "audio",
            Stage::Visual => "visual",
            Stage::Fusion => "fusion",
            Stage::Finetune => "finetune",
        }
    }

    /// Parameter prefixes updated by the optimizer; everything else is frozen.
    pub fn trainable_prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::Audio => &["audio"],
            Stage::Visual => &["visual/bigru", "visual/classifier"],
            Stage::Fusion => &["fusion"],
            Stage::Finetune => &["audio", "visual", "fusion"],
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (expected audio, visual, fusion or finetune)"))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub max_epochs: usize,
    /// Defaults to 32 for the audio and visual stages and 16 otherwise.
    pub batch_size: Option<usize>,
    /// Defaults to 1e-3, or 1e-5 for fine-tuning.
    pub lr_init: Option<f64>,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub mixup: bool,
    pub mixup_alpha: f64,
    /// Draw a mixing weight per example instead of one per batch.
    pub mixup_per_example: bool,
    pub seed: u64,
    /// Caps the number of optimizer steps per epoch.
    pub steps_per_epoch: Option<usize>,
    /// Validate on every 1 s window of each clip (probabilities averaged)
    /// instead of the center second.
    pub validate_full_clip: bool,
    /// Store wall time per epoch; when off the column is 0 so histories
    /// compare bitwise.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Audio,
            max_epochs: 200,
            batch_size: None,
            lr_init: None,
            plateau_factor: 0.5,
            plateau_patience: 20,
            early_stop_patience: 50,
            mixup: true,
            mixup_alpha: 0.4,
            mixup_per_example: false,
            seed: 0,
            steps_per_epoch: None,
            validate_full_clip: false,
            record_time: true,
        }
    }
}

impl TrainConfig {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            max_epochs: if stage == Stage::Finetune { 5 } else { 200 },
            ..Self::default()
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.stage {
            Stage::Audio | Stage::Visual => 32,
            Stage::Fusion | Stage::Finetune => 16,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr_init.unwrap_or(match self.stage {
            Stage::Finetune => 1e-5,
            _ => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.lr() > 0.0) {
            return bad("lr_init must be positive");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must be in (0, 1)");
        }
        if !(self.mixup_alpha > 0.0) {
            return bad("mixup_alpha must be positive");
        }
        if self.batch_size() < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive");
        }
        Ok(())
    }
}
