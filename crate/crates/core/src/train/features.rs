use std::collections::BTreeMap;
use std::path::Path;

use avscene_autodiff::{checkpoint, ParamSet, Tensor};
use serde_json::json;

use crate::data::ExampleSource;
use crate::error::{Error, Result};
use crate::visual_net::{Backbone, BACKBONE_PREFIX, FEATURE_DIM};

/// FNV-1a over the backbone's parameter paths and values, used to tell
/// whether cached features still match the weights.
pub fn backbone_fingerprint(ps: &ParamSet<f32>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (path, p) in ps.iter().filter(|(k, _)| k.starts_with(BACKBONE_PREFIX)) {
        eat(path.as_bytes());
        for v in p.tensor.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Per-frame backbone features `[frames, 512]` keyed by example id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureCache {
    fingerprint: u64,
    features: BTreeMap<String, Tensor<f32>>,
}

impl FeatureCache {
    /// Embeds every frame of the listed examples.
    pub fn build(backbone: &Backbone, ps: &ParamSet<f32>, source: &dyn ExampleSource, indices: &[usize]) -> Result<Self> {
        backbone.check_params(ps)?;
        let mut features = BTreeMap::new();
        for (n, &i) in indices.iter().enumerate() {
            let frames = source.frames(i, 0, source.frame_count(i), backbone.norm())?;
            features.insert(source.id(i), backbone.embed(ps, &frames)?);
            if (n + 1) % 100 == 0 {
                log::info!("embedded {} of {} examples", n + 1, indices.len());
            }
        }
        Ok(Self {
            fingerprint: backbone_fingerprint(ps),
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// True when the cache was computed with these backbone weights.
    pub fn matches(&self, ps: &ParamSet<f32>) -> bool {
        self.fingerprint == backbone_fingerprint(ps)
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<f32>> {
        self.features.get(id)
    }

    /// Rows `[start, start + count)` of an example as `[count, 512]`.
    pub fn window(&self, id: &str, start: usize, count: usize) -> Option<Tensor<f32>> {
        let t = self.features.get(id)?;
        if start + count > t.shape()[0] {
            return None;
        }
        let data = t.data()[start * FEATURE_DIM..(start + count) * FEATURE_DIM].to_vec();
        Tensor::new(&[count, FEATURE_DIM], data).ok()
    }

    /// Stored in the checkpoint container, one entry per example id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut ps = ParamSet::new();
        for (id, t) in &self.features {
            ps.insert_statistic(format!("features/{id}"), t.clone())?;
        }
        checkpoint::save(
            path,
            &ps,
            0,
            json!({ "kind": "frame_features", "fingerprint": self.fingerprint.to_string() }),
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (ps, manifest) = checkpoint::load::<f32>(path)?;
        let fingerprint = manifest.metadata["fingerprint"]
            .as_str()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(path, "not a feature cache"))?;
        let features = ps
            .iter()
            .filter_map(|(k, p)| k.strip_prefix("features/").map(|id| (id.to_string(), p.tensor.clone())))
            .collect();
        Ok(Self { fingerprint, features })
    }
}
