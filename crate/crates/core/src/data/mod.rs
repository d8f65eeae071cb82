//! Datasets: the manifest-driven on-disk layout and a procedural synthetic
//! dataset with complementary audio and visual cues.

mod frames;
mod manifest;
pub mod synthetic;

pub use frames::{read_png_rgb8, write_png_rgb8};
pub use manifest::{load_manifest, read_example, read_frames_dir, split_report, ManifestEntry, ManifestSource, SplitReport};
pub use synthetic::{SyntheticDataset, SyntheticSpec};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frontend::{AudioClip, SAMPLE_RATE};
use crate::labels::SceneClass;
use crate::visual_net::{FrameNorm, FrameSequence, FPS};

pub const CLIP_SECONDS: usize = 10;
/// Video frames in a full example.
pub const FRAMES_PER_CLIP: usize = CLIP_SECONDS * FPS;
/// Audio samples per video frame at the working rate.
pub const SAMPLES_PER_FRAME: usize = SAMPLE_RATE as usize / FPS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" | "validation" | "test" => Ok(Split::Val),
            other => Err(format!("unknown split `{other}` (expected train or val)")),
        }
    }
}

/// Random access to aligned audio-visual examples. Time is addressed in
/// video frames (0.2 s); audio comes back at 44.1 kHz.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, index: usize) -> String;

    fn label(&self, index: usize) -> SceneClass;

    fn split(&self, index: usize) -> Split;

    /// Video frames available for the example.
    fn frame_count(&self, index: usize) -> usize;

    /// Audio covering frames `[start, start + count)`.
    fn audio(&self, index: usize, start: usize, count: usize) -> Result<AudioClip>;

    /// Frames `[start, start + count)` normalized with `norm`.
    fn frames(&self, index: usize, start: usize, count: usize, norm: FrameNorm) -> Result<FrameSequence>;

    fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split(i) == split).collect()
    }
}
