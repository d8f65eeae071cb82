use std::path::Path;

use avscene_autodiff::checkpoint::{self, Manifest};
use avscene_autodiff::ParamSet;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::fusion::{AvModel, ModelConfig};

/// Saves parameters with the model configuration under `metadata.model`;
/// `extra` fields are merged into the metadata.
pub fn save_model(path: impl AsRef<Path>, model: &AvModel, ps: &ParamSet<f32>, seed: u64, extra: Value) -> Result<()> {
    let mut metadata = json!({ "model": model.config });
    if let (Some(m), Value::Object(extra)) = (metadata.as_object_mut(), extra) {
        m.extend(extra);
    }
    checkpoint::save(path, ps, seed, metadata)?;
    Ok(())
}

/// Loads a checkpoint written by [`save_model`]. Checkpoints without a
/// model configuration get the defaults.
pub fn load_model(path: impl AsRef<Path>) -> Result<(AvModel, ParamSet<f32>, Manifest)> {
    let path = path.as_ref();
    let (ps, manifest) = checkpoint::load::<f32>(path)?;
    let config: ModelConfig = match manifest.metadata.get("model") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::data(path, format!("model configuration: {e}")))?,
        None => ModelConfig::default(),
    };
    Ok((AvModel::new(config)?, ps, manifest))
}
