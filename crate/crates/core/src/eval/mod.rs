//! Clip-level prediction and evaluation reports.

mod report;

pub use report::{render, EvalReport, HeadMetrics, ReportFormat, REPORT_SCHEMA_VERSION};

use avscene_autodiff::{ParamSet, Tensor};

use crate::data::{ExampleSource, Split};
use crate::error::{Error, Result};
use crate::frontend::{AudioClip, Frontend, SAMPLE_RATE};
use crate::fusion::{AvModel, Head, PredictionBundle};
use crate::train::crop::CROP_FRAMES;
use crate::train::{FeatureCache, WindowLoader};
use crate::visual_net::{FrameSequence, FEATURE_DIM};

fn window_features(all: &Tensor<f32>, windows: usize) -> Result<Vec<Tensor<f32>>> {
    (0..windows)
        .map(|w| {
            let rows = &all.data()[w * CROP_FRAMES * FEATURE_DIM..(w + 1) * CROP_FRAMES * FEATURE_DIM];
            Ok(Tensor::new(&[CROP_FRAMES, FEATURE_DIM], rows.to_vec())?)
        })
        .collect()
}

/// Splits an aligned example into non-overlapping one-second windows and
/// averages each head's probabilities over them. A trailing partial second
/// is dropped with a warning.
pub fn predict_clip(
    model: &AvModel,
    ps: &ParamSet<f32>,
    frontend: &Frontend,
    clip: &AudioClip,
    frames: &FrameSequence,
) -> Result<PredictionBundle> {
    let clip = clip.clone().to_working_rate()?;
    let second = SAMPLE_RATE as usize;
    let windows = (clip.len() / second).min(frames.len() / CROP_FRAMES);
    if windows == 0 {
        return Err(Error::Config("example is shorter than one second".into()));
    }
    if clip.len() % second != 0 || frames.len() != windows * CROP_FRAMES {
        log::warn!(
            "dropping the remainder after {windows} s ({} samples, {} frames)",
            clip.len(),
            frames.len()
        );
    }
    let heads = model.available_heads(ps);
    let reps = if heads.contains(&Head::Audio) {
        (0..windows)
            .map(|w| frontend.make_rep(&clip.slice(w * second, second)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let features = if heads.contains(&Head::Visual) {
        let all = model.visual.backbone.embed(ps, &frames.slice(0, windows * CROP_FRAMES)?)?;
        window_features(&all, windows)?
    } else {
        Vec::new()
    };
    Ok(PredictionBundle::mean(&model.predict_windows(ps, &reps, &features)?))
}

/// [`predict_clip`] for one example of a source, using cached features
/// when they match the backbone.
pub fn predict_example(loader: &WindowLoader, ps: &ParamSet<f32>, index: usize) -> Result<PredictionBundle> {
    let windows = loader.source.frame_count(index) / CROP_FRAMES;
    if windows == 0 {
        return Err(Error::Config(format!("example `{}` is shorter than one second", loader.source.id(index))));
    }
    let heads = loader.model.available_heads(ps);
    let starts: Vec<usize> = (0..windows).map(|w| w * CROP_FRAMES).collect();
    let reps = if heads.contains(&Head::Audio) {
        starts.iter().map(|&s| loader.rep(index, s)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let features = if heads.contains(&Head::Visual) {
        starts.iter().map(|&s| loader.features(ps, index, s)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(PredictionBundle::mean(&loader.model.predict_windows(ps, &reps, &features)?))
}

/// Scores every example of `split`. `heads` lists heads that must be
/// present; all available heads are reported.
pub fn evaluate(
    model: &AvModel,
    ps: &ParamSet<f32>,
    frontend: &Frontend,
    source: &dyn ExampleSource,
    split: Split,
    cache: Option<&FeatureCache>,
    heads: &[Head],
) -> Result<EvalReport> {
    let available = model.available_heads(ps);
    if let Some(h) = heads.iter().find(|h| !available.contains(h)) {
        return Err(Error::MissingHead(h.name().into()));
    }
    let indices = source.indices(split);
    if indices.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", split.name())));
    }
    let loader = WindowLoader::new(model, frontend, source, cache, ps)?;
    let mut predictions = Vec::with_capacity(indices.len());
    for (n, &i) in indices.iter().enumerate() {
        predictions.push(predict_example(&loader, ps, i)?);
        if (n + 1) % 100 == 0 {
            log::info!("evaluated {} of {} examples", n + 1, indices.len());
        }
    }
    let labels: Vec<usize> = indices.iter().map(|&i| source.label(i).index()).collect();
    EvalReport::from_predictions(&predictions, &labels, model.config.audio.n_classes)
}
