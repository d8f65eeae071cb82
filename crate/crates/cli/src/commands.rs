use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use avscene_autodiff::ParamSet;
use avscene_core::budget::ParamBudget;
use avscene_core::data::{self, split_report, ExampleSource, ManifestSource, Split, SyntheticDataset, SyntheticSpec};
use avscene_core::eval::{self, render, ReportFormat};
use avscene_core::frontend::{wav, FilterbankKind, Frontend};
use avscene_core::fusion::{AvModel, Head, ModelConfig};
use avscene_core::gradcheck::{run_suite, DEFAULT_SEEDS, TOLERANCE};
use avscene_core::model_io::{load_model, save_model};
use avscene_core::train::{prepare_params, FeatureCache, Stage, TrainConfig, Trainer};
use avscene_core::visual_net::{load_vgg16_backbone, BackboneKind};
use avscene_core::SceneClass;
use clap::Args;
use serde_json::json;

use crate::Failure;

type CmdResult = Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        error: anyhow!(message.into()),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(value: &str) -> Result<T, Failure> {
    value.parse().map_err(usage)
}

#[derive(Args)]
pub struct PrepareArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    examples_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the nearest-centroid separability check
    #[arg(long)]
    skip_self_test: bool,
}

pub fn prepare_synthetic(a: PrepareArgs) -> CmdResult {
    if a.examples_per_class < 2 {
        return Err(usage("--examples-per-class must be at least 2"));
    }
    let ds = SyntheticDataset::new(SyntheticSpec::new(a.examples_per_class, a.seed))?;
    if !a.skip_self_test {
        let t = ds.self_test(&Frontend::new(FilterbankKind::Gammatone))?;
        println!(
            "self-test: separable classes {:.3} ({} examples), ambiguous pair {:.3} ({} examples)",
            t.separable_accuracy, t.n_separable, t.ambiguous_accuracy, t.n_ambiguous
        );
    }
    let manifest = ds.write_to_disk(&a.out)?;
    let entries = data::load_manifest(&manifest)?;
    let split = split_report(&entries);
    println!(
        "wrote {} ({} train / {} val)",
        manifest.display(),
        split.n_train,
        split.n_val
    );
    Ok(())
}

#[derive(Args)]
pub struct ModelArgs {
    /// Front-end filterbank: gammatone or mel
    #[arg(long, default_value = "gammatone")]
    filterbank: String,
    /// Frame backbone: tiny or vgg16
    #[arg(long, default_value = "tiny")]
    backbone: String,
    /// Converted VGG16 checkpoint (required for --backbone vgg16)
    #[arg(long)]
    backbone_weights: Option<PathBuf>,
}

impl ModelArgs {
    fn config(&self) -> Result<ModelConfig, Failure> {
        let mut config = ModelConfig {
            filterbank: parse(&self.filterbank)?,
            ..ModelConfig::default()
        };
        config.visual.backbone = parse(&self.backbone)?;
        Ok(config)
    }
}

/// The model and parameters from `--init`, or a fresh model. VGG16
/// weights are added when given.
fn model_and_params(init: Option<&Path>, model_args: &ModelArgs) -> Result<(AvModel, ParamSet<f32>), Failure> {
    let (model, mut ps) = match init {
        Some(path) => {
            let (model, ps, _) = load_model(path)?;
            (model, ps)
        }
        None => (AvModel::new(model_args.config()?)?, ParamSet::new()),
    };
    if let Some(weights) = &model_args.backbone_weights {
        if model.config.visual.backbone != BackboneKind::Vgg16 {
            return Err(usage("--backbone-weights needs --backbone vgg16"));
        }
        if !ps.iter().any(|(k, _)| k.starts_with("visual/backbone/")) {
            ps.absorb("", load_vgg16_backbone(weights)?)?;
        }
    }
    Ok((model, ps))
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output cache file
    #[arg(long)]
    out: PathBuf,
    /// Take the backbone from this checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Seed of a freshly initialized tiny backbone (same as `train --seed`)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
}

pub fn extract_features(a: ExtractArgs) -> CmdResult {
    let (model, ps) = model_and_params(a.checkpoint.as_deref(), &a.model)?;
    let ps = if ps.iter().any(|(k, _)| k.starts_with("visual/backbone/")) {
        ps
    } else {
        prepare_params(&model, ps, Stage::Visual, a.seed)?
    };
    let source = ManifestSource::open(&a.manifest)?;
    let all: Vec<usize> = (0..source.len()).collect();
    let cache = FeatureCache::build(&model.visual.backbone, &ps, &source, &all)?;
    cache.save(&a.out)?;
    println!("cached features of {} examples in {}", cache.len(), a.out.display());
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// audio, visual, fusion or finetune
    #[arg(long)]
    stage: String,
    /// Checkpoint from the previous stage
    #[arg(long)]
    init: Option<PathBuf>,
    /// Output checkpoint; the history is written next to it
    #[arg(long)]
    out: PathBuf,
    /// Feature cache from `extract-features`
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    plateau_patience: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    /// Disable mixup
    #[arg(long)]
    no_mixup: bool,
    /// Draw a mixup weight per example
    #[arg(long)]
    mixup_per_example: bool,
    /// Validate on every second of each clip instead of the center second
    #[arg(long)]
    validate_full_clip: bool,
    /// Write 0 instead of wall time in the history
    #[arg(long)]
    no_time: bool,
    #[command(flatten)]
    model: ModelArgs,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let stage: Stage = parse(&a.stage)?;
    let mut config = TrainConfig::for_stage(stage);
    config.max_epochs = a.epochs.unwrap_or(config.max_epochs);
    config.batch_size = a.batch_size;
    config.lr_init = a.lr;
    config.seed = a.seed;
    config.steps_per_epoch = a.steps_per_epoch;
    config.plateau_patience = a.plateau_patience.unwrap_or(config.plateau_patience);
    config.early_stop_patience = a.early_stop_patience.unwrap_or(config.early_stop_patience);
    config.mixup = !a.no_mixup;
    config.mixup_per_example = a.mixup_per_example;
    config.validate_full_clip = a.validate_full_clip;
    config.record_time = !a.no_time;
    config.validate()?;

    let (model, ps) = model_and_params(a.init.as_deref(), &a.model)?;
    let frontend = Frontend::new(model.config.filterbank);
    let source = ManifestSource::open(&a.manifest)?;
    let cache = a.features.as_ref().map(FeatureCache::load).transpose()?;
    let out = Trainer::new(&model, &frontend, &source, cache.as_ref()).run(ps, &config)?;

    let dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.history.save(dir, &format!("{stem}_history"))?;
    save_model(
        &a.out,
        &model,
        &out.params,
        a.seed,
        json!({ "stage": stage, "best_epoch": out.history.best_epoch, "train_config": config }),
    )?;
    let best = out.history.best();
    println!(
        "{stage}: best epoch {} (val_acc {:.4}), {} epochs run, saved {}",
        out.history.best_epoch,
        best.map_or(f64::NAN, |r| r.val_acc),
        out.history.records.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// train or val
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long)]
    features: Option<PathBuf>,
    /// Heads that must be present (audio, visual, early, late)
    #[arg(long = "require", value_delimiter = ',')]
    require: Vec<String>,
    /// Report directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// text, csv or json; repeatable
    #[arg(long = "format", value_delimiter = ',', default_value = "text,csv,json")]
    formats: Vec<String>,
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let split: Split = parse(&a.split)?;
    let heads = a.require.iter().map(|h| parse::<Head>(h)).collect::<Result<Vec<_>, _>>()?;
    let formats = a.formats.iter().map(|f| parse::<ReportFormat>(f)).collect::<Result<Vec<_>, _>>()?;
    let (model, ps, _) = load_model(&a.checkpoint)?;
    let frontend = Frontend::new(model.config.filterbank);
    let source = ManifestSource::open(&a.manifest)?;
    let cache = a.features.as_ref().map(FeatureCache::load).transpose()?;
    let report = eval::evaluate(&model, &ps, &frontend, &source, split, cache.as_ref(), &heads)?;
    print!("{}", report.to_text());
    if let Some(dir) = &a.out {
        for format in formats {
            for file in render(&report, format, dir)? {
                log::info!("wrote {}", file.display());
            }
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Stereo WAV (44.1 or 48 kHz)
    #[arg(long)]
    audio: PathBuf,
    /// Directory of 224x224 PNG frames at 5 fps
    #[arg(long)]
    frames: PathBuf,
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let (model, ps, _) = load_model(&a.checkpoint)?;
    let frontend = Frontend::new(model.config.filterbank);
    let clip = wav::read(&a.audio)?;
    let frames = data::read_frames_dir(&a.frames, model.visual.backbone.norm())?;
    let bundle = eval::predict_clip(&model, &ps, &frontend, &clip, &frames)?;
    let label = |p: &[f64]| SceneClass::from_index(avscene_autodiff::argmax(p)).map(SceneClass::name);
    let probs: serde_json::Map<_, _> = bundle.heads.iter().map(|(h, p)| (h.name().to_string(), json!(p))).collect();
    let labels: serde_json::Map<_, _> = bundle.heads.iter().map(|(h, p)| (h.name().to_string(), json!(label(p)))).collect();
    println!("{}", serde_json::to_string_pretty(&json!({ "probabilities": probs, "labels": labels }))?);
    Ok(())
}

#[derive(Args)]
pub struct ParamsArgs {
    /// tiny or vgg16
    #[arg(long, default_value = "tiny")]
    backbone: String,
    /// Count the parameters of a checkpoint instead of a default model
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

pub fn params(a: ParamsArgs) -> CmdResult {
    let budget = match &a.checkpoint {
        Some(path) => {
            let (model, ps, _) = load_model(path)?;
            ParamBudget::of(&ps, model.config.visual.backbone)
        }
        None => {
            let mut config = ModelConfig::default();
            config.visual.backbone = parse(&a.backbone)?;
            ParamBudget::for_config(&config)?
        }
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&budget)?);
    } else {
        print!("{}", budget.to_text());
    }
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = DEFAULT_SEEDS)]
    seeds: u64,
    /// Only run checks whose name contains this
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, default_value_t = TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    json: bool,
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if a.seeds == 0 {
        return Err(usage("--seeds must be positive"));
    }
    let report = run_suite(a.seeds, a.filter.as_deref())?;
    if report.results.is_empty() {
        return Err(usage("no check matches the filter"));
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        let mut names: Vec<&str> = report.results.iter().map(|r| r.name).collect();
        names.dedup();
        for name in names {
            let worst = report
                .results
                .iter()
                .filter(|r| r.name == name)
                .map(|r| r.max_rel_error)
                .fold(0.0, f64::max);
            println!("{name:<24} {worst:.3e}");
        }
        println!("max relative error {:.3e} (tolerance {:.0e})", report.max_rel_error(), a.tolerance);
    }
    let failures = report.failures(a.tolerance);
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("FAILED {} seed {}: {:.3e} at {:?}", f.name, f.seed, f.max_rel_error, f.worst);
        }
        return Err(Failure {
            code: 4,
            error: anyhow!("{} gradient checks exceeded the tolerance", failures.len()),
        });
    }
    Ok(())
}
