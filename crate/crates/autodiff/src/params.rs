use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// What a stored array is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Learned by gradient descent when trainable.
    Weight,
    /// Updated outside the optimizer (batch-norm running statistics); never trainable.
    Statistic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
    pub kind: ParamKind,
}

/// Named parameters keyed by slash-separated path, e.g. `audio/block1/conv1/kernel`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        self.insert_param(
            path.into(),
            Param {
                tensor,
                trainable,
                kind: ParamKind::Weight,
            },
        )
    }

    pub fn insert_statistic(&mut self, path: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        self.insert_param(
            path.into(),
            Param {
                tensor,
                trainable: false,
                kind: ParamKind::Statistic,
            },
        )
    }

    pub fn insert_param(&mut self, path: String, param: Param<T>) -> Result<()> {
        if self.entries.contains_key(&path) {
            return Err(Error::DuplicateParameter(path));
        }
        self.entries.insert(path, param);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Param<T>> {
        self.entries.get(path)
    }

    pub fn tensor(&self, path: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(path)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }

    pub fn tensor_mut(&mut self, path: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(path)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))
    }

    /// Replaces a value, keeping flags. The new value must keep the shape.
    pub fn set_tensor(&mut self, path: &str, tensor: Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(path)
            .ok_or_else(|| Error::UnknownParameter(path.to_string()))?;
        if p.tensor.shape() != tensor.shape() {
            return Err(Error::shape("set_tensor", path.to_string(), p.tensor.shape(), tensor.shape()));
        }
        p.tensor = tensor;
        Ok(())
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Sets the trainable flag on every weight under `prefix`. Statistics stay frozen.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (path, p) in self.entries.iter_mut() {
            if path.starts_with(prefix) && p.kind == ParamKind::Weight {
                p.trainable = trainable;
            }
        }
    }

    /// Scalar count, optionally restricted to trainable entries.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.entries
            .values()
            .filter(|p| !trainable_only || p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Scalar count of entries under `prefix`.
    pub fn count_prefix(&self, prefix: &str, trainable_only: bool) -> usize {
        self.entries
            .iter()
            .filter(|(k, p)| k.starts_with(prefix) && (!trainable_only || p.trainable))
            .map(|(_, p)| p.tensor.len())
            .sum()
    }

    /// Adds every entry of `other` under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet<T>) -> Result<()> {
        for (k, p) in other.entries {
            self.insert_param(format!("{prefix}{k}"), p)?;
        }
        Ok(())
    }

    /// Entries under `prefix`, with the prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, p)| k.strip_prefix(prefix).map(|s| (s.to_string(), p.clone())))
                .collect(),
        }
    }

    /// Applies queued running-statistic writes from a training graph.
    pub fn apply_state_updates(&mut self, updates: Vec<(String, Tensor<T>)>) -> Result<()> {
        for (path, value) in updates {
            self.set_tensor(&path, value)?;
        }
        Ok(())
    }
}

/// Scalar count of a parameter set, optionally only trainable entries.
pub fn count_params<T: Float>(params: &ParamSet<T>, trainable_only: bool) -> usize {
    params.count(trainable_only)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_set_counts_zero() {
        assert_eq!(count_params(&ParamSet::<f32>::new(), false), 0);
    }

    #[test]
    fn dense_128_to_10_has_1290() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("dense/kernel", Tensor::zeros(&[128, 10]), true).unwrap();
        ps.insert("dense/bias", Tensor::zeros(&[10]), true).unwrap();
        assert_eq!(count_params(&ps, true), 1290);
    }

    #[test]
    fn duplicate_path_rejected() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("a", Tensor::zeros(&[1]), true).unwrap();
        assert!(matches!(
            ps.insert("a", Tensor::zeros(&[1]), true),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn statistics_never_become_trainable() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("bn/gamma", Tensor::ones(&[4]), false).unwrap();
        ps.insert_statistic("bn/moving_mean", Tensor::zeros(&[4])).unwrap();
        ps.set_trainable("bn/", true);
        assert_eq!(ps.count(true), 4);
        assert_eq!(ps.count(false), 8);
    }
}
