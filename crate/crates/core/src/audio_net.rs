//! Audio subnetwork: three residual convolution blocks with concurrent
//! spatial and channel squeeze-excitation after the residual sum, time-axis
//! max pooling between blocks, and a global-average-pooled softmax head.
//!
//! Inputs are `[B, 64, T, 3]` (bands, frames, `{L, R, L - R}`).

use avscene_autodiff::init::Rng;
use avscene_autodiff::layers::{BatchNorm, Conv2d, Dense};
use avscene_autodiff::{Float, Graph, ParamSet, Result as EngineResult, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::N_BANDS;
use crate::labels::N_CLASSES;

/// Parameter namespace of the audio subnetwork.
pub const PREFIX: &str = "audio";

/// How the channel and spatial recalibrations are merged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScseCombine {
    #[default]
    Max,
    Add,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioNetConfig {
    pub block_filters: Vec<usize>,
    pub dropout_rate: f64,
    pub n_classes: usize,
    pub scse_reduction: usize,
    pub scse_combine: ScseCombine,
}

impl Default for AudioNetConfig {
    fn default() -> Self {
        Self {
            block_filters: vec![32, 64, 128],
            dropout_rate: 0.3,
            n_classes: N_CLASSES,
            scse_reduction: 2,
            scse_combine: ScseCombine::Max,
        }
    }
}

impl AudioNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_filters.is_empty() || self.block_filters.contains(&0) {
            return Err(Error::Config("audio block_filters must be non-empty and positive".into()));
        }
        if self.scse_reduction == 0 {
            return Err(Error::Config("scse_reduction must be positive".into()));
        }
        if let Some(c) = self.block_filters.iter().find(|&&c| c % self.scse_reduction != 0) {
            return Err(Error::Config(format!(
                "scse_reduction {} does not divide block width {c}",
                self.scse_reduction
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        Ok(())
    }

    /// Width of the pooled embedding and of the feature maps.
    pub fn feature_dim(&self) -> usize {
        *self.block_filters.last().expect("validated")
    }
}

/// Channel (`cSE`) and spatial (`sSE`) squeeze-excitation.
#[derive(Clone, Debug)]
pub struct Scse {
    pub squeeze: Dense,
    pub excite: Dense,
    pub spatial: Conv2d,
    pub combine: ScseCombine,
}

impl Scse {
    pub fn new(name: &str, channels: usize, reduction: usize, combine: ScseCombine) -> Self {
        Self {
            squeeze: Dense::new(format!("{name}/cse_squeeze"), channels, channels / reduction),
            excite: Dense::new(format!("{name}/cse_excite"), channels / reduction, channels),
            spatial: Conv2d::new(format!("{name}/sse"), 1, channels, 1),
            combine,
        }
    }

    pub fn init<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng) -> EngineResult<()> {
        self.squeeze.init(ps, rng)?;
        self.excite.init(ps, rng)?;
        self.spatial.init(ps, rng)
    }

    /// `x: [B, F, T, C]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, x: Var) -> EngineResult<Var> {
        let shape = g.shape(x).to_vec();
        let (b, c) = (shape[0], shape[3]);
        let pooled = g.mean_axes(x, &[1, 2])?;
        let s = self.squeeze.forward(g, ps, pooled)?;
        let s = g.relu(s);
        let e = self.excite.forward(g, ps, s)?;
        let e = g.sigmoid(e);
        let channel_gate = g.reshape(e, &[b, 1, 1, c])?;
        let cse = g.mul(x, channel_gate)?;
        let q = self.spatial.forward(g, ps, x)?;
        let spatial_gate = g.sigmoid(q);
        let sse = g.mul(x, spatial_gate)?;
        match self.combine {
            ScseCombine::Max => g.maximum(cse, sse),
            ScseCombine::Add => g.add(cse, sse),
        }
    }
}

/// Residual double convolution followed by ELU and squeeze-excitation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    /// 1x1 projection and its batch norm when the width changes.
    pub shortcut: Option<(Conv2d, BatchNorm)>,
    pub scse: Scse,
}

impl ConvBlock {
    pub fn new(name: &str, input: usize, output: usize, reduction: usize, combine: ScseCombine) -> Self {
        let shortcut = (input != output).then(|| {
            (
                Conv2d::new(format!("{name}/shortcut_conv"), 1, input, output),
                BatchNorm::new(format!("{name}/shortcut_bn"), output),
            )
        });
        Self {
            conv1: Conv2d::new(format!("{name}/conv1"), 3, input, output),
            bn1: BatchNorm::new(format!("{name}/bn1"), output),
            conv2: Conv2d::new(format!("{name}/conv2"), 3, output, output),
            bn2: BatchNorm::new(format!("{name}/bn2"), output),
            shortcut,
            scse: Scse::new(&format!("{name}/scse"), output, reduction, combine),
        }
    }

    pub fn init<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng) -> EngineResult<()> {
        self.conv1.init(ps, rng)?;
        self.bn1.init(ps)?;
        self.conv2.init(ps, rng)?;
        self.bn2.init(ps)?;
        if let Some((conv, bn)) = &self.shortcut {
            conv.init(ps, rng)?;
            bn.init(ps)?;
        }
        self.scse.init(ps, rng)
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, x: Var) -> EngineResult<Var> {
        let h = self.conv1.forward(g, ps, x)?;
        let h = self.bn1.forward(g, ps, h)?;
        let h = g.elu(h);
        let h = self.conv2.forward(g, ps, h)?;
        let h = self.bn2.forward(g, ps, h)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(g, ps, x)?;
                bn.forward(g, ps, s)?
            }
            None => x,
        };
        let sum = g.add(h, skip)?;
        let sum = g.elu(sum);
        self.scse.forward(g, ps, sum)
    }
}

/// Graph handles produced by [`AudioNet::forward`].
#[derive(Clone, Copy, Debug)]
pub struct AudioOutputs {
    pub logits: Var,
    pub probs: Var,
    /// Output of the last block, `[B, 64, T', C_last]`.
    pub feature_maps: Var,
}

#[derive(Clone, Debug)]
pub struct AudioNet {
    pub config: AudioNetConfig,
    pub blocks: Vec<ConvBlock>,
    pub classifier: Dense,
}

impl AudioNet {
    pub fn new(config: AudioNetConfig) -> Result<Self> {
        config.validate()?;
        let mut input = 3;
        let blocks = config
            .block_filters
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let block = ConvBlock::new(
                    &format!("{PREFIX}/block{}", i + 1),
                    input,
                    out,
                    config.scse_reduction,
                    config.scse_combine,
                );
                input = out;
                block
            })
            .collect();
        let classifier = Dense::new(format!("{PREFIX}/classifier"), config.feature_dim(), config.n_classes);
        Ok(Self {
            config,
            blocks,
            classifier,
        })
    }

    pub fn init<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        for block in &self.blocks {
            block.init(ps, rng)?;
        }
        self.classifier.init(ps, rng)?;
        Ok(())
    }

    pub fn init_params<T: Float>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut ps = ParamSet::new();
        self.init(&mut ps, &mut avscene_autodiff::init::rng(seed))?;
        Ok(ps)
    }

    /// Frame count after the time-axis poolings between blocks.
    pub fn pooled_frames(&self, frames: usize) -> usize {
        (1..self.blocks.len()).fold(frames, |t, _| t / 2)
    }

    /// `rep: [B, 64, T, 3]`. Max pooling halves the time axis (floor) and
    /// dropout follows it between consecutive blocks.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, rep: Var) -> Result<AudioOutputs> {
        let shape = g.shape(rep).to_vec();
        if shape.len() != 4 || shape[1] != N_BANDS || shape[3] != 3 {
            return Err(Error::Config(format!(
                "audio input must be [batch, {N_BANDS}, frames, 3], got {shape:?}"
            )));
        }
        if self.pooled_frames(shape[2]) == 0 {
            return Err(Error::Config(format!("{} frames is too short for the audio network", shape[2])));
        }
        let mut x = rep;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = g.max_pool2d(x, (1, 2))?;
                x = g.dropout(x, self.config.dropout_rate)?;
            }
            x = block.forward(g, ps, x)?;
        }
        let feature_maps = x;
        let pooled = g.mean_axes(feature_maps, &[1, 2])?;
        let logits = self.classifier.forward(g, ps, pooled)?;
        let probs = g.softmax(logits)?;
        Ok(AudioOutputs {
            logits,
            probs,
            feature_maps,
        })
    }
}
