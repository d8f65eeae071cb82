//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::graph::Gradients;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;

/// First and second moment estimates per parameter path, plus the step
/// counter used for bias correction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub state: AdamState<T>,
}

impl<T: Float> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            state: AdamState {
                step: 0,
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            },
        }
    }

    /// One update of every trainable weight. Non-trainable entries are not
    /// touched. Fails before modifying anything if a trainable weight has
    /// no gradient.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &Gradients<T>) -> Result<()> {
        let mut pending = Vec::new();
        for (path, p) in params.iter() {
            if !p.trainable {
                continue;
            }
            let g = grads
                .param(path)
                .ok_or_else(|| Error::MissingGradient(path.to_string()))?;
            if g.shape() != p.tensor.shape() {
                return Err(Error::shape("adam", path.to_string(), p.tensor.shape(), g.shape()));
            }
            pending.push((path.to_string(), g.clone()));
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let alpha = self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2) = (T::from_f64c(self.beta1), T::from_f64c(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let (alpha, eps) = (T::from_f64c(alpha), T::from_f64c(self.epsilon));
        for (path, g) in pending {
            let shape = g.shape().to_vec();
            let m = self
                .state
                .m
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            let v = self
                .state
                .v
                .entry(path.clone())
                .or_insert_with(|| Tensor::zeros(&shape));
            let w = params.tensor_mut(&path)?;
            let (md, vd, wd) = (m.data_mut(), v.data_mut(), w.data_mut());
            for (((w, m), v), &g) in wd.iter_mut().zip(md).zip(vd).zip(g.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - alpha * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
