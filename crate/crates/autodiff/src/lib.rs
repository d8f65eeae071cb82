//! Small reverse-mode automatic differentiation engine with the layers,
//! optimizer and checkpoint format used by the scene classifiers.
//!
//! A [`Graph`] is a tape: every op evaluates eagerly and records how to
//! propagate gradients. Parameters live in a [`ParamSet`] keyed by path and
//! are bound into a graph with [`Graph::param`].

pub mod checkpoint;
mod error;
mod float;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use float::Float;
pub use gradcheck::{GradCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Mode, Var};
pub use ops::{adaptive_bounds, BatchStats, Padding, PROB_EPS};
pub use optim::{Adam, AdamState};
pub use params::{count_params, Param, ParamKind, ParamSet};
pub use tensor::{argmax, Tensor};
