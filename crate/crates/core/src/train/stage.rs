use std::time::Instant;

use avscene_autodiff::{Adam, Graph, Mode, ParamKind, ParamSet, Tensor, Var, PROB_EPS};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::crop::{center_crop_start, random_crop_start, CROP_FRAMES};
use super::features::FeatureCache;
use super::history::{EpochRecord, StopReason, TrainHistory};
use super::mixup::{mixup_batch, one_hot, MixPlan};
use super::schedule::{EarlyStopping, Plateau};
use super::{Stage, TrainConfig};
use crate::data::{ExampleSource, Split};
use crate::error::{Error, Result};
use crate::frontend::{AudioRep, Frontend};
use crate::fusion::{AvModel, Head};
use crate::visual_net::{BackboneKind, BACKBONE_PREFIX};

/// Cuts aligned one-second windows out of a source and turns them into
/// network inputs.
pub struct WindowLoader<'a> {
    pub model: &'a AvModel,
    pub frontend: &'a Frontend,
    pub source: &'a dyn ExampleSource,
    cache: Option<&'a FeatureCache>,
}

impl<'a> WindowLoader<'a> {
    /// `cache` is ignored unless it was built with the backbone in `ps`.
    pub fn new(
        model: &'a AvModel,
        frontend: &'a Frontend,
        source: &'a dyn ExampleSource,
        cache: Option<&'a FeatureCache>,
        ps: &ParamSet<f32>,
    ) -> Result<Self> {
        if frontend.kind() != model.config.filterbank {
            return Err(Error::Config(format!(
                "model expects a {:?} front end, got {:?}",
                model.config.filterbank,
                frontend.kind()
            )));
        }
        let cache = cache.filter(|c| {
            let ok = c.matches(ps);
            if !ok {
                log::warn!("feature cache does not match the backbone weights; recomputing features");
            }
            ok
        });
        Ok(Self {
            model,
            frontend,
            source,
            cache,
        })
    }

    /// Standardized representation of frames `[start, start + 5)`.
    pub fn rep(&self, index: usize, start: usize) -> Result<AudioRep> {
        self.frontend.make_rep(&self.source.audio(index, start, CROP_FRAMES)?)
    }

    /// Backbone features `[5, 512]` of the same window.
    pub fn features(&self, ps: &ParamSet<f32>, index: usize, start: usize) -> Result<Tensor<f32>> {
        if let Some(t) = self.cache.and_then(|c| c.window(&self.source.id(index), start, CROP_FRAMES)) {
            return Ok(t);
        }
        let backbone = &self.model.visual.backbone;
        backbone.embed(ps, &self.source.frames(index, start, CROP_FRAMES, backbone.norm())?)
    }

    /// Normalized frames `[5, H, W, 3]` of the window.
    pub fn frames(&self, index: usize, start: usize) -> Result<Tensor<f32>> {
        let norm = self.model.visual.backbone.norm();
        Ok(self.source.frames(index, start, CROP_FRAMES, norm)?.tensor().clone())
    }
}

/// Batched network inputs; which fields are set depends on the stage.
struct Inputs {
    reps: Option<Tensor<f32>>,
    features: Option<Tensor<f32>>,
    frames: Option<Tensor<f32>>,
}

impl Inputs {
    fn tensors(&self) -> Vec<Tensor<f32>> {
        [&self.reps, &self.features, &self.frames].into_iter().flatten().cloned().collect()
    }

    fn replace(&self, mut mixed: Vec<Tensor<f32>>) -> Inputs {
        let mut take = |present: bool| present.then(|| mixed.remove(0));
        Inputs {
            reps: take(self.reps.is_some()),
            features: take(self.features.is_some()),
            frames: take(self.frames.is_some()),
        }
    }
}

/// Heads whose cross-entropies are summed into a stage's loss; the last one
/// is monitored for scheduling.
pub fn objective_heads(stage: Stage) -> &'static [Head] {
    match stage {
        Stage::Audio => &[Head::Audio],
        Stage::Visual => &[Head::Visual],
        Stage::Fusion => &[Head::Early, Head::Late],
        Stage::Finetune => &[Head::Audio, Head::Visual, Head::Early, Head::Late],
    }
}

/// Mean cross-entropy of probability rows against class indices, with the
/// same clamping as the training loss.
pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].clamp(PROB_EPS, 1.0 - PROB_EPS).ln())
        .sum();
    total / labels.len().max(1) as f64
}

/// Adds missing namespaces for `stage`, checks the prerequisites and sets
/// trainability: only the stage's prefixes are updated.
pub fn prepare_params(model: &AvModel, mut ps: ParamSet<f32>, stage: Stage, seed: u64) -> Result<ParamSet<f32>> {
    let mut rng = avscene_autodiff::init::rng(seed);
    let missing = |ps: &ParamSet<f32>, name: &str| !ps.contains(&format!("{name}/kernel"));
    let need = |requirement: &str| Error::Prerequisite {
        stage: stage.name().into(),
        requirement: requirement.into(),
    };
    match stage {
        Stage::Audio => {
            if missing(&ps, &model.audio.classifier.name) {
                model.audio.init(&mut ps, &mut rng)?;
            }
        }
        Stage::Visual => {
            let backbone = &model.visual.backbone;
            let has_backbone = ps.iter().any(|(k, _)| k.starts_with(BACKBONE_PREFIX));
            if !has_backbone && backbone.kind() == BackboneKind::Tiny {
                backbone.init(&mut ps, &mut rng, false)?;
            } else if !has_backbone {
                return Err(need("converted VGG16 backbone weights"));
            }
            backbone.check_params(&ps)?;
            if missing(&ps, &model.visual.classifier.name) {
                model.visual.init_head(&mut ps, &mut rng)?;
            }
        }
        Stage::Fusion => {
            let heads = model.available_heads(&ps);
            if !heads.contains(&Head::Audio) {
                return Err(need("a trained audio network"));
            }
            if !heads.contains(&Head::Visual) {
                return Err(need("a trained visual network"));
            }
            if missing(&ps, &model.fusion.early.name) {
                model.fusion.init(&mut ps, &mut rng)?;
            }
        }
        Stage::Finetune => {
            if !model.available_heads(&ps).contains(&Head::Late) {
                return Err(need("trained audio, visual and fusion networks"));
            }
        }
    }
    ps.set_trainable("", false);
    for prefix in stage.trainable_prefixes() {
        ps.set_trainable(prefix, true);
    }
    Ok(ps)
}

fn under(path: &str, prefixes: &[&str]) -> bool {
    prefixes.iter().any(|p| path == *p || path.starts_with(&format!("{p}/")))
}

/// Weights and statistics a stage must leave untouched.
fn frozen_snapshot(ps: &ParamSet<f32>, stage: Stage) -> Vec<(String, Tensor<f32>)> {
    ps.iter()
        .filter(|(k, p)| !under(k, stage.trainable_prefixes()) || (p.kind == ParamKind::Weight && !p.trainable))
        .map(|(k, p)| (k.to_string(), p.tensor.clone()))
        .collect()
}

fn check_frozen(ps: &ParamSet<f32>, snapshot: &[(String, Tensor<f32>)]) -> Result<()> {
    for (path, before) in snapshot {
        let now = ps.tensor(path)?;
        let same = now.shape() == before.shape()
            && now.data().iter().zip(before.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::FrozenViolation(path.clone()));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct StageOutput {
    /// Weights of the best validation epoch.
    pub params: ParamSet<f32>,
    pub history: TrainHistory,
}

/// Runs training stages over an [`ExampleSource`].
pub struct Trainer<'a> {
    pub model: &'a AvModel,
    pub frontend: &'a Frontend,
    pub source: &'a dyn ExampleSource,
    pub cache: Option<&'a FeatureCache>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a AvModel, frontend: &'a Frontend, source: &'a dyn ExampleSource, cache: Option<&'a FeatureCache>) -> Self {
        Self {
            model,
            frontend,
            source,
            cache,
        }
    }

    fn loader(&self, ps: &ParamSet<f32>, stage: Stage) -> Result<WindowLoader<'a>> {
        // the backbone moves while fine-tuning, so cached features go stale
        let cache = if stage == Stage::Finetune { None } else { self.cache };
        WindowLoader::new(self.model, self.frontend, self.source, cache, ps)
    }

    fn load(&self, loader: &WindowLoader, ps: &ParamSet<f32>, stage: Stage, windows: &[(usize, usize)]) -> Result<Inputs> {
        let stack = |f: &dyn Fn(usize, usize) -> Result<Tensor<f32>>| -> Result<Tensor<f32>> {
            let items = windows.iter().map(|&(i, s)| f(i, s)).collect::<Result<Vec<_>>>()?;
            Ok(Tensor::stack(&items)?)
        };
        let audio = stage != Stage::Visual;
        let features = matches!(stage, Stage::Visual | Stage::Fusion);
        let frames = stage == Stage::Finetune;
        Ok(Inputs {
            reps: audio.then(|| stack(&|i, s| Ok(loader.rep(i, s)?.to_tensor()))).transpose()?,
            features: features.then(|| stack(&|i, s| loader.features(ps, i, s))).transpose()?,
            frames: frames.then(|| stack(&|i, s| loader.frames(i, s))).transpose()?,
        })
    }

    /// Probabilities of the stage's objective heads. Frozen subnetworks of
    /// the fusion stage run in a separate inference graph.
    fn heads(&self, g: &mut Graph<f32>, ps: &ParamSet<f32>, stage: Stage, inputs: &Inputs) -> Result<Vec<Var>> {
        let m = self.model;
        let get = |t: &Option<Tensor<f32>>| t.clone().ok_or_else(|| Error::Config("batch is missing an input".into()));
        match stage {
            Stage::Audio => {
                let x = g.input(get(&inputs.reps)?);
                Ok(vec![m.audio.forward(g, ps, x)?.probs])
            }
            Stage::Visual => {
                let x = g.input(get(&inputs.features)?);
                Ok(vec![m.visual.forward_features(g, ps, x)?.probs])
            }
            Stage::Fusion => {
                let mut frozen = Graph::new(Mode::Infer);
                let rep = frozen.input(get(&inputs.reps)?);
                let feats = frozen.input(get(&inputs.features)?);
                let a = m.audio.forward(&mut frozen, ps, rep)?;
                let v = m.visual.forward_features(&mut frozen, ps, feats)?;
                let mut lift = |v: Var| g.input(frozen.value(v).clone());
                let (maps, pa, pv, f) = (lift(a.feature_maps), lift(a.probs), lift(v.probs), lift(feats));
                let out = m.fusion.forward(g, ps, maps, f, pa, pv)?;
                Ok(vec![out.early, out.late])
            }
            Stage::Finetune => {
                let rep = g.input(get(&inputs.reps)?);
                let frames = g.input(get(&inputs.frames)?);
                let out = m.forward(g, ps, rep, frames)?;
                Ok(vec![out.audio, out.visual, out.early, out.late])
            }
        }
    }

    /// Validation loss (summed objective cross-entropies) and accuracy of
    /// the monitored head. Each example is scored on its center second, or
    /// on the mean over all its one-second windows when `full_clip`.
    pub fn validate(&self, ps: &ParamSet<f32>, stage: Stage, indices: &[usize], full_clip: bool) -> Result<(f64, f64)> {
        if indices.is_empty() {
            return Err(Error::Config("no validation examples".into()));
        }
        let loader = self.loader(ps, stage)?;
        let n_heads = objective_heads(stage).len();
        let mut per_head: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_heads];
        let labels: Vec<usize> = indices.iter().map(|&i| self.source.label(i).index()).collect();
        let chunk = if full_clip { 4 } else { 32 };
        for group in indices.chunks(chunk) {
            let mut windows = Vec::new();
            let mut owner = Vec::new();
            for (k, &i) in group.iter().enumerate() {
                let frames = self.source.frame_count(i);
                let starts: Vec<usize> = if full_clip {
                    (0..frames / CROP_FRAMES).map(|w| w * CROP_FRAMES).collect()
                } else {
                    vec![center_crop_start(frames)?]
                };
                for s in starts {
                    windows.push((i, s));
                    owner.push(k);
                }
            }
            let inputs = self.load(&loader, ps, stage, &windows)?;
            let mut g = Graph::new(Mode::Infer);
            let heads = self.heads(&mut g, ps, stage, &inputs)?;
            for (h, &var) in heads.iter().enumerate() {
                let t = g.value(var);
                let c = t.shape()[1];
                let mut sums = vec![vec![0.0; c]; group.len()];
                let mut counts = vec![0usize; group.len()];
                for (w, &k) in owner.iter().enumerate() {
                    counts[k] += 1;
                    for (acc, &p) in sums[k].iter_mut().zip(&t.data()[w * c..(w + 1) * c]) {
                        *acc += p as f64;
                    }
                }
                for (mut row, n) in sums.into_iter().zip(counts) {
                    row.iter_mut().for_each(|v| *v /= n as f64);
                    per_head[h].push(row);
                }
            }
        }
        let loss = per_head.iter().map(|probs| cross_entropy(probs, &labels)).sum();
        let monitored = per_head.last().expect("at least one head");
        let correct = monitored
            .iter()
            .zip(&labels)
            .filter(|(p, y)| avscene_autodiff::argmax(p) == **y)
            .count();
        Ok((loss, correct as f64 / labels.len() as f64))
    }

    /// Trains one stage and returns the best-epoch weights with the
    /// per-epoch history.
    pub fn run(&self, params: ParamSet<f32>, config: &TrainConfig) -> Result<StageOutput> {
        config.validate()?;
        let stage = config.stage;
        let mut ps = prepare_params(self.model, params, stage, config.seed)?;
        let snapshot = frozen_snapshot(&ps, stage);
        let train = self.source.indices(Split::Train);
        let val = self.source.indices(Split::Val);
        if train.len() < 2 {
            return Err(Error::Config("at least two training examples are needed".into()));
        }
        if val.is_empty() {
            return Err(Error::Config("no validation examples".into()));
        }
        let batch_size = config.batch_size();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x5eed_0000 + stage as u64));
        let mut adam = Adam::new(config.lr());
        let mut plateau = Plateau::new(config.plateau_factor, config.plateau_patience);
        let mut stopper = EarlyStopping::new(config.early_stop_patience);
        let mut best = ps.clone();
        let mut records = Vec::new();
        let mut stop_reason = StopReason::MaxEpochs;

        for epoch in 1..=config.max_epochs {
            let started = Instant::now();
            let lr = adam.lr;
            let loader = self.loader(&ps, stage)?;
            let mut order = train.clone();
            order.shuffle(&mut rng);
            let mut batches: Vec<&[usize]> = order.chunks(batch_size).filter(|b| b.len() >= 2).collect();
            if let Some(limit) = config.steps_per_epoch {
                batches.truncate(limit);
            }
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            for batch in batches {
                let windows = batch
                    .iter()
                    .map(|&i| Ok((i, random_crop_start(self.source.frame_count(i), &mut rng)?)))
                    .collect::<Result<Vec<_>>>()?;
                let inputs = self.load(&loader, &ps, stage, &windows)?;
                let labels: Vec<usize> = batch.iter().map(|&i| self.source.label(i).index()).collect();
                let targets = one_hot(&labels, self.model.config.audio.n_classes);
                let plan = if config.mixup {
                    MixPlan::sample(batch.len(), config.mixup_alpha, config.mixup_per_example, &mut rng)?
                } else {
                    MixPlan::identity(batch.len())
                };
                let (mixed, targets) = mixup_batch(&inputs.tensors(), &targets, &plan)?;
                let inputs = inputs.replace(mixed);

                let mut g = Graph::with_seed(Mode::Train, rng.random::<u64>());
                let heads = self.heads(&mut g, &ps, stage, &inputs)?;
                let t = g.input(targets);
                let mut loss = g.cross_entropy(heads[0], t)?;
                for &h in &heads[1..] {
                    let l = g.cross_entropy(h, t)?;
                    loss = g.add(loss, l)?;
                }
                let value = g.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::Config(format!("training loss became {value} in epoch {epoch}")));
                }
                let grads = g.backward(loss)?;
                adam.step(&mut ps, &grads)?;
                ps.apply_state_updates(g.take_state_updates())?;
                loss_sum += value * batch.len() as f64;
                seen += batch.len();
            }
            check_frozen(&ps, &snapshot)?;
            let (val_loss, val_acc) = self.validate(&ps, stage, &val, config.validate_full_clip)?;
            let record = EpochRecord {
                epoch,
                train_loss: loss_sum / seen.max(1) as f64,
                val_loss,
                val_acc,
                lr,
                seconds: if config.record_time { started.elapsed().as_secs_f64() } else { 0.0 },
            };
            log::info!(
                "{stage} epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4} lr {:.2e}",
                record.train_loss,
                val_loss,
                val_acc,
                lr
            );
            records.push(record);
            if plateau.observe(val_acc) {
                adam.lr *= config.plateau_factor;
            }
            let stop = stopper.observe(epoch, val_acc);
            if stopper.best_epoch() == epoch {
                best = ps.clone();
            }
            if stop {
                stop_reason = StopReason::EarlyStop;
                break;
            }
        }
        Ok(StageOutput {
            params: best,
            history: TrainHistory {
                stage,
                records,
                best_epoch: stopper.best_epoch(),
                stop_reason,
            },
        })
    }
}
