//! Visual subnetwork: a time-distributed convolutional backbone whose
//! spatially averaged 512-channel output feeds a bidirectional GRU and a
//! per-step softmax classifier. The clip prediction is the mean of the
//! step predictions.

use avscene_autodiff::init::Rng;
use avscene_autodiff::layers::{BiGru, Conv2d, Dense};
use avscene_autodiff::{checkpoint, Float, Graph, Mode, ParamSet, Result as EngineResult, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::N_CLASSES;

pub const PREFIX: &str = "visual";
pub const BACKBONE_PREFIX: &str = "visual/backbone";
/// Frames per second of the visual stream.
pub const FPS: usize = 5;
pub const FRAME_SIZE: usize = 224;
/// Channel count every backbone must produce.
pub const FEATURE_DIM: usize = 512;

/// Per-channel RGB means of the places365 training images, 0-255 scale.
pub const PLACES365_MEAN_RGB: [f32; 3] = [116.676, 112.514, 104.051];

/// Pixel preprocessing a backbone expects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameNorm {
    /// `x / 255`.
    UnitRange,
    /// `x - mean` per channel on the 0-255 scale.
    Places365,
}

impl FrameNorm {
    pub fn apply(self, channel: usize, value: u8) -> f32 {
        match self {
            FrameNorm::UnitRange => value as f32 / 255.0,
            FrameNorm::Places365 => value as f32 - PLACES365_MEAN_RGB[channel],
        }
    }
}

/// `[N, H, W, 3]` frames, already normalized for a backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Tensor<f32>,
    norm: FrameNorm,
}

impl FrameSequence {
    pub fn new(frames: Tensor<f32>, norm: FrameNorm) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[0] == 0 || s[3] != 3 {
            return Err(Error::Config(format!("frames must be [N >= 1, H, W, 3], got {s:?}")));
        }
        if !frames.all_finite() {
            return Err(Error::Config("frames contain non-finite values".into()));
        }
        Ok(Self { frames, norm })
    }

    /// Interleaved RGB8 images of `height x width`.
    pub fn from_rgb8(images: &[Vec<u8>], height: usize, width: usize, norm: FrameNorm) -> Result<Self> {
        let per = height * width * 3;
        let mut data = Vec::with_capacity(images.len() * per);
        for (i, img) in images.iter().enumerate() {
            if img.len() != per {
                return Err(Error::Config(format!(
                    "frame {i} has {} bytes, expected {per} for {height}x{width} RGB",
                    img.len()
                )));
            }
            data.extend(img.iter().enumerate().map(|(j, &v)| norm.apply(j % 3, v)));
        }
        Self::new(Tensor::new(&[images.len(), height, width, 3], data)?, norm)
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> FrameNorm {
        self.norm
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.frames
    }

    /// Frames `[start, start + count)`.
    pub fn slice(&self, start: usize, count: usize) -> Result<FrameSequence> {
        if count == 0 || start + count > self.len() {
            return Err(Error::Config(format!(
                "frame range {start}..{} outside a sequence of {}",
                start + count,
                self.len()
            )));
        }
        let per = self.frames.len() / self.len();
        let s = self.frames.shape();
        let data = self.frames.data()[start * per..(start + count) * per].to_vec();
        FrameSequence::new(Tensor::new(&[count, s[1], s[2], 3], data)?, self.norm)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    /// Small randomly initialized stand-in, `[0, 1]` pixels.
    #[default]
    Tiny,
    /// VGG16 convolutional stack loaded from a converted checkpoint.
    Vgg16,
}

impl std::str::FromStr for BackboneKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(Self::Tiny),
            "vgg16" => Ok(Self::Vgg16),
            other => Err(format!("unknown backbone `{other}` (expected tiny or vgg16)")),
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    /// Convolution followed by ReLU.
    Conv(Conv2d),
    MaxPool,
    AvgPool,
}

/// VGG16 convolution names with input and output widths, in order. A
/// 2x2 max pool follows the last convolution of each group.
pub const VGG16_LAYERS: [(&str, usize, usize); 13] = [
    ("conv1_1", 3, 64),
    ("conv1_2", 64, 64),
    ("conv2_1", 64, 128),
    ("conv2_2", 128, 128),
    ("conv3_1", 128, 256),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv4_1", 256, 512),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv5_1", 512, 512),
    ("conv5_2", 512, 512),
    ("conv5_3", 512, 512),
];

/// Widths of the tiny backbone's four stages.
pub const TINY_WIDTHS: [usize; 4] = [8, 16, 32, 512];

/// Frame feature extractor. Parameters live under [`BACKBONE_PREFIX`].
#[derive(Clone, Debug)]
pub struct Backbone {
    kind: BackboneKind,
    layers: Vec<Layer>,
}

impl Backbone {
    /// Four stages of 2x2 average pooling, 3x3 convolution and ReLU:
    /// 224 -> 14 spatially, 512 output channels.
    pub fn tiny() -> Self {
        let mut layers = Vec::new();
        let mut input = 3;
        for (i, &w) in TINY_WIDTHS.iter().enumerate() {
            layers.push(Layer::AvgPool);
            layers.push(Layer::Conv(Conv2d::new(format!("{BACKBONE_PREFIX}/stage{}", i + 1), 3, input, w)));
            input = w;
        }
        Self {
            kind: BackboneKind::Tiny,
            layers,
        }
    }

    /// 13 convolutions and 5 max pools: 224 -> 7 spatially.
    pub fn vgg16() -> Self {
        let mut layers = Vec::new();
        for (name, cin, cout) in VGG16_LAYERS {
            layers.push(Layer::Conv(Conv2d::new(format!("{BACKBONE_PREFIX}/{name}"), 3, cin, cout)));
            if matches!(name, "conv1_2" | "conv2_2" | "conv3_3" | "conv4_3" | "conv5_3") {
                layers.push(Layer::MaxPool);
            }
        }
        Self {
            kind: BackboneKind::Vgg16,
            layers,
        }
    }

    pub fn of_kind(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Tiny => Self::tiny(),
            BackboneKind::Vgg16 => Self::vgg16(),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn norm(&self) -> FrameNorm {
        match self.kind {
            BackboneKind::Tiny => FrameNorm::UnitRange,
            BackboneKind::Vgg16 => FrameNorm::Places365,
        }
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }

    pub fn output_channels(&self) -> usize {
        self.convs().last().map_or(3, |c| c.output)
    }

    /// Spatial output size for a square input.
    pub fn output_size(&self, input: usize) -> usize {
        self.layers
            .iter()
            .filter(|l| !matches!(l, Layer::Conv(_)))
            .fold(input, |s, _| s / 2)
    }

    /// Randomly initialized parameters with the given trainability.
    pub fn init<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng, trainable: bool) -> Result<()> {
        for conv in self.convs() {
            conv.init(ps, rng)?;
        }
        ps.set_trainable(BACKBONE_PREFIX, trainable);
        Ok(())
    }

    /// Checks that `ps` holds every backbone weight with the right shape.
    pub fn check_params<T: Float>(&self, ps: &ParamSet<T>) -> Result<()> {
        if self.output_channels() != FEATURE_DIM {
            return Err(Error::Backbone {
                layer: "output".into(),
                message: format!("produces {} channels, expected {FEATURE_DIM}", self.output_channels()),
            });
        }
        for conv in self.convs() {
            let layer = conv.name.trim_start_matches(&format!("{BACKBONE_PREFIX}/")).to_string();
            for (leaf, shape) in [("kernel", conv.shape().to_vec()), ("bias", vec![conv.output])] {
                let path = format!("{}/{leaf}", conv.name);
                match ps.get(&path) {
                    None => {
                        return Err(Error::Backbone {
                            layer,
                            message: format!("missing `{leaf}`"),
                        });
                    }
                    Some(p) if p.tensor.shape() != shape.as_slice() => {
                        return Err(Error::Backbone {
                            layer,
                            message: format!("`{leaf}` has shape {:?}, expected {shape:?}", p.tensor.shape()),
                        });
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// `x: [N, H, W, 3]` to `[N, h, w, 512]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, x: Var) -> EngineResult<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = match layer {
                Layer::Conv(conv) => {
                    let y = conv.forward(g, ps, h)?;
                    g.relu(y)
                }
                Layer::MaxPool => g.max_pool2d(h, (2, 2))?,
                Layer::AvgPool => g.avg_pool2d(h, (2, 2))?,
            };
        }
        Ok(h)
    }

    /// Spatially averaged features `[N, 512]` for every frame, evaluated
    /// in inference mode a few frames at a time.
    pub fn embed(&self, ps: &ParamSet<f32>, frames: &FrameSequence) -> Result<Tensor<f32>> {
        if frames.norm() != self.norm() {
            return Err(Error::Config(format!(
                "frames normalized as {:?} but the {:?} backbone expects {:?}",
                frames.norm(),
                self.kind,
                self.norm()
            )));
        }
        let chunk = match self.kind {
            BackboneKind::Tiny => 25,
            BackboneKind::Vgg16 => 1,
        };
        let n = frames.len();
        let mut out = Vec::with_capacity(n * FEATURE_DIM);
        let mut start = 0;
        while start < n {
            let count = chunk.min(n - start);
            let part = frames.slice(start, count)?;
            let mut g = Graph::new(Mode::Infer);
            let x = g.input(part.tensor().clone());
            let maps = self.forward(&mut g, ps, x)?;
            let pooled = g.mean_axes(maps, &[1, 2])?;
            out.extend_from_slice(g.value(pooled).data());
            start += count;
        }
        Ok(Tensor::new(&[n, FEATURE_DIM], out)?)
    }
}

/// Reads a converted VGG16 checkpoint (layer paths `conv1_1/kernel`,
/// `conv1_1/bias`, ...) into frozen parameters under [`BACKBONE_PREFIX`].
pub fn load_vgg16_backbone(path: impl AsRef<Path>) -> Result<ParamSet<f32>> {
    let (raw, _) = checkpoint::load::<f32>(path)?;
    let mut ps = ParamSet::new();
    for (name, param) in raw.iter() {
        let stripped = name.strip_prefix(&format!("{BACKBONE_PREFIX}/")).unwrap_or(name);
        ps.insert(format!("{BACKBONE_PREFIX}/{stripped}"), param.tensor.clone(), false)?;
    }
    Backbone::vgg16().check_params(&ps)?;
    Ok(ps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualNetConfig {
    pub backbone: BackboneKind,
    /// Units per GRU direction.
    pub gru_units: usize,
    pub n_classes: usize,
}

impl Default for VisualNetConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Tiny,
            gru_units: 32,
            n_classes: N_CLASSES,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VisualOutputs {
    /// `[B, N, classes]`.
    pub step_probs: Var,
    /// `[B, classes]`, the mean of `step_probs` over steps.
    pub probs: Var,
    /// `[B, N, 512]`.
    pub feature_seq: Var,
}

#[derive(Clone, Debug)]
pub struct VisualNet {
    pub config: VisualNetConfig,
    pub backbone: Backbone,
    pub bigru: BiGru,
    pub classifier: Dense,
}

impl VisualNet {
    pub fn new(config: VisualNetConfig) -> Result<Self> {
        if config.gru_units == 0 || config.n_classes < 2 {
            return Err(Error::Config("visual gru_units must be positive and n_classes >= 2".into()));
        }
        Ok(Self {
            backbone: Backbone::of_kind(config.backbone),
            bigru: BiGru::new(&format!("{PREFIX}/bigru"), FEATURE_DIM, config.gru_units),
            classifier: Dense::new(format!("{PREFIX}/classifier"), 2 * config.gru_units, config.n_classes),
            config,
        })
    }

    /// Head parameters only (GRU and classifier).
    pub fn init_head<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        self.bigru.init(ps, rng)?;
        self.classifier.init(ps, rng)?;
        Ok(())
    }

    /// Head plus a frozen backbone; VGG16 weights initialized here are
    /// random and meant only for shape and budget checks.
    pub fn init<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        self.backbone.init(ps, rng, false)?;
        self.init_head(ps, rng)
    }

    /// `features: [B, N, 512]`.
    pub fn forward_features<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, features: Var) -> Result<VisualOutputs> {
        let shape = g.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != FEATURE_DIM {
            return Err(Error::Config(format!("visual features must be [batch, steps, {FEATURE_DIM}], got {shape:?}")));
        }
        let seq = self.bigru.forward(g, ps, features)?;
        let logits = self.classifier.forward(g, ps, seq)?;
        let step_probs = g.softmax(logits)?;
        let probs = g.mean_axes(step_probs, &[1])?;
        Ok(VisualOutputs {
            step_probs,
            probs,
            feature_seq: features,
        })
    }

    /// `frames: [B, N, H, W, 3]` through the backbone and the head.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, frames: Var) -> Result<VisualOutputs> {
        let shape = g.shape(frames).to_vec();
        if shape.len() != 5 {
            return Err(Error::Config(format!("frames must be [batch, steps, H, W, 3], got {shape:?}")));
        }
        let (b, n) = (shape[0], shape[1]);
        let flat = g.reshape(frames, &[b * n, shape[2], shape[3], shape[4]])?;
        let maps = self.backbone.forward(g, ps, flat)?;
        let pooled = g.mean_axes(maps, &[1, 2])?;
        let features = g.reshape(pooled, &[b, n, FEATURE_DIM])?;
        self.forward_features(g, ps, features)
    }
}
