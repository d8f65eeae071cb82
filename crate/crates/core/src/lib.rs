//! Audio-visual scene classification: front end, networks, training
//! stages, datasets and evaluation.

pub mod audio_net;
pub mod budget;
pub mod data;
mod error;
pub mod eval;
pub mod frontend;
pub mod fusion;
pub mod gradcheck;
pub mod labels;
pub mod model_io;
pub mod train;
pub mod visual_net;

pub use error::{Error, Result};
pub use labels::{SceneClass, N_CLASSES};
