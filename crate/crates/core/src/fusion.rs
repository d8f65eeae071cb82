//! Audio-visual fusion: audio feature maps averaged over frequency and
//! pooled to the 5 fps visual grid, concatenated after the visual features
//! (visual first), a bidirectional GRU with a pooled softmax head (early
//! fusion), and a dense softmax over the three predictions (late fusion).

use std::collections::BTreeMap;

use avscene_autodiff::init::Rng;
use avscene_autodiff::layers::{BiGru, Dense};
use avscene_autodiff::{Float, Graph, Mode, ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::audio_net::{self, AudioNet, AudioNetConfig};
use crate::error::{Error, Result};
use crate::frontend::{AudioRep, FilterbankKind};
use crate::labels::N_CLASSES;
use crate::visual_net::{self, VisualNet, VisualNetConfig, FEATURE_DIM, FPS};

pub const PREFIX: &str = "fusion";

/// Averages `maps: [B, F, T', C]` over frequency, then pools time into
/// `steps` contiguous bins, giving `[B, steps, C]`.
pub fn audio_to_sequence<T: Float>(g: &mut Graph<T>, maps: Var, steps: usize) -> Result<Var> {
    let shape = g.shape(maps).to_vec();
    if shape.len() != 4 {
        return Err(Error::Config(format!("audio feature maps must be [B, F, T, C], got {shape:?}")));
    }
    if shape[2] < steps {
        return Err(Error::Config(format!(
            "{} pooled audio frames cannot be split into {steps} steps",
            shape[2]
        )));
    }
    let over_time = g.mean_axes(maps, &[1])?;
    Ok(g.adaptive_avg_pool(over_time, 1, steps)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Units per GRU direction.
    pub gru_units: usize,
    pub audio_features: usize,
    pub visual_features: usize,
    pub steps: usize,
    pub n_classes: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            gru_units: 64,
            audio_features: 128,
            visual_features: FEATURE_DIM,
            steps: FPS,
            n_classes: N_CLASSES,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionHead {
    pub config: FusionConfig,
    pub bigru: BiGru,
    pub early: Dense,
    pub late: Dense,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionOutputs {
    pub early: Var,
    pub late: Var,
}

impl FusionHead {
    pub fn new(config: FusionConfig) -> Result<Self> {
        if config.gru_units == 0 || config.steps == 0 || config.n_classes < 2 {
            return Err(Error::Config("fusion gru_units and steps must be positive".into()));
        }
        Ok(Self {
            bigru: BiGru::new(
                &format!("{PREFIX}/bigru"),
                config.visual_features + config.audio_features,
                config.gru_units,
            ),
            early: Dense::new(format!("{PREFIX}/early_classifier"), 2 * config.gru_units, config.n_classes),
            late: Dense::new(format!("{PREFIX}/late_classifier"), 3 * config.n_classes, config.n_classes),
            config,
        })
    }

    pub fn init<T: Float>(&self, ps: &mut ParamSet<T>, rng: &mut Rng) -> Result<()> {
        self.bigru.init(ps, rng)?;
        self.early.init(ps, rng)?;
        self.late.init(ps, rng)?;
        Ok(())
    }

    /// `visual: [B, S, 512]`, `audio: [B, S, 128]` to early-fusion
    /// probabilities `[B, classes]`.
    pub fn early_forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, visual: Var, audio: Var) -> Result<Var> {
        let (vs, as_) = (g.shape(visual).to_vec(), g.shape(audio).to_vec());
        if vs.len() != 3 || as_.len() != 3 || vs[..2] != as_[..2] {
            return Err(Error::Config(format!(
                "visual {vs:?} and audio {as_:?} sequences are not step-aligned"
            )));
        }
        let fused = g.concat(&[visual, audio], 2)?;
        let seq = self.bigru.forward(g, ps, fused)?;
        let pooled = g.mean_axes(seq, &[1])?;
        let logits = self.early.forward(g, ps, pooled)?;
        Ok(g.softmax(logits)?)
    }

    /// Dense softmax over `[p_audio, p_visual, p_early]`.
    pub fn late_forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, p_audio: Var, p_visual: Var, p_early: Var) -> Result<Var> {
        let stacked = g.concat(&[p_audio, p_visual, p_early], 1)?;
        let logits = self.late.forward(g, ps, stacked)?;
        Ok(g.softmax(logits)?)
    }

    /// Both fusion heads from audio feature maps and visual features.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamSet<T>,
        audio_maps: Var,
        visual_features: Var,
        p_audio: Var,
        p_visual: Var,
    ) -> Result<FusionOutputs> {
        let audio_seq = audio_to_sequence(g, audio_maps, self.config.steps)?;
        let early = self.early_forward(g, ps, visual_features, audio_seq)?;
        let late = self.late_forward(g, ps, p_audio, p_visual, early)?;
        Ok(FusionOutputs { early, late })
    }
}

/// The four prediction heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Audio,
    Visual,
    Early,
    Late,
}

impl Head {
    pub const ALL: [Head; 4] = [Head::Audio, Head::Visual, Head::Early, Head::Late];

    pub fn name(self) -> &'static str {
        match self {
            Head::Audio => "audio",
            Head::Visual => "visual",
            Head::Early => "early",
            Head::Late => "late",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Head::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| format!("unknown head `{s}` (expected audio, visual, early or late)"))
    }
}

/// Class probabilities of every head a model provides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub heads: BTreeMap<Head, Vec<f64>>,
}

impl PredictionBundle {
    pub fn get(&self, head: Head) -> Option<&[f64]> {
        self.heads.get(&head).map(Vec::as_slice)
    }

    /// Per-head mean of several bundles (same heads in each).
    pub fn mean(bundles: &[PredictionBundle]) -> PredictionBundle {
        let mut heads = BTreeMap::new();
        if let Some(first) = bundles.first() {
            for (&head, probs) in &first.heads {
                let mut acc = vec![0.0; probs.len()];
                for b in bundles {
                    for (a, p) in acc.iter_mut().zip(&b.heads[&head]) {
                        *a += p;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= bundles.len() as f64);
                heads.insert(head, acc);
            }
        }
        PredictionBundle { heads }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub filterbank: FilterbankKind,
    pub audio: AudioNetConfig,
    pub visual: VisualNetConfig,
    pub fusion: FusionConfig,
}

/// Graph handles of a full forward pass.
#[derive(Clone, Copy, Debug)]
pub struct AvOutputs {
    pub audio: Var,
    pub visual: Var,
    pub early: Var,
    pub late: Var,
}

/// The complete audio-visual network. Parameters are namespaced `audio/`,
/// `visual/` (backbone under `visual/backbone/`) and `fusion/`.
#[derive(Clone, Debug)]
pub struct AvModel {
    pub config: ModelConfig,
    pub audio: AudioNet,
    pub visual: VisualNet,
    pub fusion: FusionHead,
}

impl AvModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let audio = AudioNet::new(config.audio.clone())?;
        let visual = VisualNet::new(config.visual.clone())?;
        let fusion = FusionHead::new(config.fusion.clone())?;
        if config.fusion.audio_features != config.audio.feature_dim() {
            return Err(Error::Config(format!(
                "fusion expects {} audio features but the audio network produces {}",
                config.fusion.audio_features,
                config.audio.feature_dim()
            )));
        }
        if config.fusion.visual_features != FEATURE_DIM
            || config.fusion.n_classes != config.audio.n_classes
            || config.visual.n_classes != config.audio.n_classes
        {
            return Err(Error::Config("fusion, audio and visual class counts and widths disagree".into()));
        }
        Ok(Self {
            config,
            audio,
            visual,
            fusion,
        })
    }

    /// Fresh parameters for every namespace; the backbone is frozen.
    pub fn init_params<T: Float>(&self, seed: u64) -> Result<ParamSet<T>> {
        let mut rng = avscene_autodiff::init::rng(seed);
        let mut ps = ParamSet::new();
        self.audio.init(&mut ps, &mut rng)?;
        self.visual.init(&mut ps, &mut rng)?;
        self.fusion.init(&mut ps, &mut rng)?;
        Ok(ps)
    }

    /// Heads whose parameters are all present.
    pub fn available_heads<T: Float>(&self, ps: &ParamSet<T>) -> Vec<Head> {
        let has = |p: &str| ps.contains(&format!("{p}/kernel"));
        let audio = has(&self.audio.classifier.name);
        let visual = has(&self.visual.classifier.name) && self.visual.backbone.check_params(ps).is_ok();
        let fusion = audio && visual && has(&self.fusion.early.name) && has(&self.fusion.late.name);
        let mut heads = Vec::new();
        if audio {
            heads.push(Head::Audio);
        }
        if visual {
            heads.push(Head::Visual);
        }
        if fusion {
            heads.extend([Head::Early, Head::Late]);
        }
        heads
    }

    /// All four heads from `rep: [B, 64, T, 3]` and visual features
    /// `[B, S, 512]`.
    pub fn forward_features<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, rep: Var, features: Var) -> Result<AvOutputs> {
        let a = self.audio.forward(g, ps, rep)?;
        let v = self.visual.forward_features(g, ps, features)?;
        let f = self.fusion.forward(g, ps, a.feature_maps, features, a.probs, v.probs)?;
        Ok(AvOutputs {
            audio: a.probs,
            visual: v.probs,
            early: f.early,
            late: f.late,
        })
    }

    /// All four heads from `rep` and raw frames `[B, S, H, W, 3]`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, ps: &ParamSet<T>, rep: Var, frames: Var) -> Result<AvOutputs> {
        let a = self.audio.forward(g, ps, rep)?;
        let v = self.visual.forward(g, ps, frames)?;
        let f = self.fusion.forward(g, ps, a.feature_maps, v.feature_seq, a.probs, v.probs)?;
        Ok(AvOutputs {
            audio: a.probs,
            visual: v.probs,
            early: f.early,
            late: f.late,
        })
    }

    /// Inference on aligned windows: `reps[i]` and `features[i]` (`[S, 512]`)
    /// cover the same second. Returns one bundle per window with every
    /// available head.
    pub fn predict_windows(&self, ps: &ParamSet<f32>, reps: &[AudioRep], features: &[Tensor<f32>]) -> Result<Vec<PredictionBundle>> {
        let heads = self.available_heads(ps);
        if heads.is_empty() {
            return Err(Error::MissingHead("any".into()));
        }
        let n = reps.len().max(features.len());
        let mut g = Graph::new(Mode::Infer);
        let mut probs: Vec<(Head, Var)> = Vec::new();
        let mut audio = None;
        if heads.contains(&Head::Audio) {
            if reps.len() != n {
                return Err(Error::Config("audio representation missing for some windows".into()));
            }
            let x = g.input(Tensor::stack(&reps.iter().map(AudioRep::to_tensor).collect::<Vec<_>>())?);
            let out = self.audio.forward(&mut g, ps, x)?;
            probs.push((Head::Audio, out.probs));
            audio = Some(out);
        }
        let mut visual = None;
        if heads.contains(&Head::Visual) {
            if features.len() != n {
                return Err(Error::Config("visual features missing for some windows".into()));
            }
            let x = g.input(Tensor::stack(features)?);
            let out = self.visual.forward_features(&mut g, ps, x)?;
            probs.push((Head::Visual, out.probs));
            visual = Some(out);
        }
        if let (Some(a), Some(v), true) = (audio, visual, heads.contains(&Head::Late)) {
            let f = self.fusion.forward(&mut g, ps, a.feature_maps, v.feature_seq, a.probs, v.probs)?;
            probs.push((Head::Early, f.early));
            probs.push((Head::Late, f.late));
        }
        let mut bundles = vec![PredictionBundle::default(); n];
        for (head, var) in probs {
            let t = g.value(var);
            let c = t.shape()[1];
            for (i, bundle) in bundles.iter_mut().enumerate() {
                bundle
                    .heads
                    .insert(head, t.data()[i * c..(i + 1) * c].iter().map(|&p| p as f64).collect());
            }
        }
        Ok(bundles)
    }

    /// Total and trainable scalar counts per namespace.
    pub fn param_budget<T: Float>(ps: &ParamSet<T>) -> Vec<(String, usize, usize)> {
        [
            audio_net::PREFIX,
            visual_net::BACKBONE_PREFIX,
            "visual/bigru",
            "visual/classifier",
            PREFIX,
        ]
        .iter()
        .map(|p| (p.to_string(), ps.count_prefix(p, false), ps.count_prefix(p, true)))
        .collect()
    }
}
