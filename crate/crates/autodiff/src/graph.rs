//! Reverse-mode tape.
//!
//! Every op appends a node holding its output value and, when any input
//! requires a gradient, a one-shot closure mapping the output gradient to
//! input gradients. Nodes are appended in evaluation order, so walking the
//! tape backwards visits each node after all of its consumers.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::float::Float;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

/// Whether stochastic layers and batch statistics are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

/// Input gradients for one op, in parent order. `None` for parents that
/// do not need one.
pub type Grads<T> = Vec<Option<Tensor<T>>>;

pub(crate) type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Grads<T>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
    mode: Mode,
    rng: ChaCha8Rng,
    state_updates: Vec<(String, Tensor<T>)>,
}

impl<T: Float> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// `seed` drives dropout masks.
    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter. Repeated calls return the same node, so a
    /// weight shared across time steps accumulates one gradient.
    pub fn param(&mut self, name: &str, params: &ParamSet<T>) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let v = self.leaf(p.tensor.clone(), p.trainable);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an op output. The closure is dropped when no parent needs a
    /// gradient.
    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: impl FnOnce(&Tensor<T>, &[bool]) -> Grads<T> + 'static,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Var(self.nodes.len() - 1)
    }

    /// Queues a non-gradient state write (batch-norm running statistics).
    pub(crate) fn push_state_update(&mut self, name: String, value: Tensor<T>) {
        self.state_updates.push((name, value));
    }

    pub fn take_state_updates(&mut self) -> Vec<(String, Tensor<T>)> {
        std::mem::take(&mut self.state_updates)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(Error::shape("backward", "loss", &[1], loss_value.shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &mut self.nodes[i];
            let Some(backward) = node.backward.take() else {
                grads[i] = Some(grad);
                continue;
            };
            let parents = node.parents.clone();
            let needs: Vec<bool> = parents
                .iter()
                .map(|p| self.nodes[p.0].requires_grad)
                .collect();
            let parent_grads = backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for ((p, g), need) in parents.iter().zip(parent_grads).zip(&needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let by_name = self
            .params
            .iter()
            .filter_map(|(name, v)| grads.get(v.0).cloned().flatten().map(|g| (name.clone(), g)))
            .collect();
        Ok(Gradients {
            leaves: grads,
            by_name,
        })
    }
}

/// Gradients of leaf nodes after a backward pass.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    by_name: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }
}
