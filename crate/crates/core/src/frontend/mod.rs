//! Audio front end: stereo PCM to the three-channel `{L, R, L-R}`
//! log-filterbank representation the audio network consumes.

mod filterbank;
mod rep;
mod resample;
mod stft;
pub mod wav;

pub use filterbank::{gammatone_matrix, mel_matrix, FilterbankKind, FilterbankMatrix, GAMMATONE_FMIN};
pub use rep::{AudioRep, Frontend, LOG_FLOOR};
pub use resample::resample;
pub use stft::{hann_window, Stft};

use crate::error::{Error, Result};

/// Working sample rate of the front end.
pub const SAMPLE_RATE: u32 = 44_100;
/// Rate of the source recordings.
pub const SOURCE_RATE: u32 = 48_000;
/// 40 ms analysis window.
pub const N_FFT: usize = 1764;
/// 50% overlap.
pub const HOP: usize = 882;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_BANDS: usize = 64;
pub const FRAMES_PER_SECOND: usize = SAMPLE_RATE as usize / HOP;

/// Stereo PCM in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    left: Vec<f32>,
    right: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(left: Vec<f32>, right: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Audio(format!(
                "channel length mismatch: left {} samples, right {}",
                left.len(),
                right.len()
            )));
        }
        if sample_rate != SAMPLE_RATE && sample_rate != SOURCE_RATE {
            return Err(Error::Audio(format!(
                "unsupported sample rate {sample_rate} Hz (expected {SOURCE_RATE} or {SAMPLE_RATE})"
            )));
        }
        Ok(Self {
            left,
            right,
            sample_rate,
        })
    }

    pub fn left(&self) -> &[f32] {
        &self.left
    }

    pub fn right(&self) -> &[f32] {
        &self.right
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, start + len)`, clamped to the clip.
    pub fn slice(&self, start: usize, len: usize) -> AudioClip {
        let s = start.min(self.len());
        let e = (start + len).min(self.len());
        AudioClip {
            left: self.left[s..e].to_vec(),
            right: self.right[s..e].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// The `{L, R, L - R}` signals.
    pub fn channels(&self) -> [Vec<f32>; 3] {
        let diff = self.left.iter().zip(&self.right).map(|(l, r)| l - r).collect();
        [self.left.clone(), self.right.clone(), diff]
    }

    /// Resamples to the working rate if needed.
    pub fn to_working_rate(self) -> Result<AudioClip> {
        if self.sample_rate == SAMPLE_RATE {
            Ok(self)
        } else {
            resample(&self, SAMPLE_RATE)
        }
    }
}
