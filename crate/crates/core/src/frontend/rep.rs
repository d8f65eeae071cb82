use avscene_autodiff::Tensor;

use super::filterbank::{gammatone_matrix, mel_matrix, FilterbankKind, FilterbankMatrix, GAMMATONE_FMIN};
use super::stft::Stft;
use super::{AudioClip, FRAMES_PER_SECOND, N_BANDS, N_FFT, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Added to filterbank energies before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// Channels whose standard deviation falls below this are only centered.
const MIN_STD: f64 = 1e-8;

/// Log-filterbank features laid out `[band][frame][channel]`, channels
/// `{L, R, L - R}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioRep {
    bands: usize,
    frames: usize,
    values: Vec<f32>,
}

impl AudioRep {
    pub fn new(bands: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != bands * frames * 3 {
            return Err(Error::Audio(format!(
                "representation of {bands} bands x {frames} frames x 3 needs {} values, got {}",
                bands * frames * 3,
                values.len()
            )));
        }
        Ok(Self { bands, frames, values })
    }

    /// `(bands, frames, channels)`.
    pub fn shape(&self) -> [usize; 3] {
        [self.bands, self.frames, 3]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_rate(&self) -> usize {
        FRAMES_PER_SECOND
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, band: usize, frame: usize, channel: usize) -> f32 {
        self.values[(band * self.frames + frame) * 3 + channel]
    }

    /// Frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<AudioRep> {
        if start + len > self.frames || len == 0 {
            return Err(Error::Audio(format!(
                "frame range {start}..{} outside representation of {} frames",
                start + len,
                self.frames
            )));
        }
        let mut values = Vec::with_capacity(self.bands * len * 3);
        for b in 0..self.bands {
            let row = (b * self.frames + start) * 3;
            values.extend_from_slice(&self.values[row..row + len * 3]);
        }
        AudioRep::new(self.bands, len, values)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&self.shape(), self.values.clone()).expect("shape checked at construction")
    }

    /// Shifts and scales each channel to zero mean and unit variance.
    /// Constant channels are only centered.
    pub fn standardize(&mut self) {
        let n = (self.bands * self.frames) as f64;
        for c in 0..3 {
            let vals = || self.values.iter().skip(c).step_by(3).map(|&v| v as f64);
            let mean = vals().sum::<f64>() / n;
            let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let scale = if std > MIN_STD { 1.0 / std } else { 1.0 };
            for v in self.values.iter_mut().skip(c).step_by(3) {
                *v = ((*v as f64 - mean) * scale) as f32;
            }
        }
    }
}

/// STFT plan plus one filterbank, built once and reused for every clip.
pub struct Frontend {
    stft: Stft,
    filterbank: FilterbankMatrix,
}

impl Frontend {
    /// 64 bands spanning `[0, 22050]` Hz for mel and `[20, 22050]` Hz for
    /// gammatone.
    pub fn new(kind: FilterbankKind) -> Self {
        let sr = SAMPLE_RATE as f64;
        let filterbank = match kind {
            FilterbankKind::Mel => mel_matrix(N_BANDS, sr, N_FFT, 0.0, sr / 2.0),
            FilterbankKind::Gammatone => gammatone_matrix(N_BANDS, sr, N_FFT, GAMMATONE_FMIN, sr / 2.0),
        }
        .expect("default filterbank ranges are valid");
        Self::with_filterbank(filterbank)
    }

    pub fn with_filterbank(filterbank: FilterbankMatrix) -> Self {
        Self {
            stft: Stft::new(),
            filterbank,
        }
    }

    pub fn kind(&self) -> FilterbankKind {
        self.filterbank.kind
    }

    pub fn filterbank(&self) -> &FilterbankMatrix {
        &self.filterbank
    }

    /// Filterbank energies of one signal before compression, frame-major
    /// `[t * bands + b]`, with the frame count.
    pub fn band_energies(&self, signal: &[f32]) -> (usize, Vec<f64>) {
        let frames = Stft::n_frames(signal.len());
        let power = self.stft.power(signal);
        (frames, self.filterbank.apply(&power, frames))
    }

    /// `log(energy + LOG_FLOOR)` for `{L, R, L - R}` without standardization.
    pub fn log_features(&self, clip: &AudioClip) -> Result<AudioRep> {
        if clip.sample_rate() != SAMPLE_RATE {
            return Err(Error::Audio(format!(
                "front end expects {SAMPLE_RATE} Hz input, got {} Hz (resample first)",
                clip.sample_rate()
            )));
        }
        if clip.is_empty() {
            return Err(Error::Audio("empty clip".into()));
        }
        let bands = self.filterbank.n_bands;
        let frames = Stft::n_frames(clip.len());
        let mut values = vec![0.0f32; bands * frames * 3];
        for (c, signal) in clip.channels().iter().enumerate() {
            let (_, energies) = self.band_energies(signal);
            for t in 0..frames {
                for b in 0..bands {
                    values[(b * frames + t) * 3 + c] = (energies[t * bands + b] + LOG_FLOOR).ln() as f32;
                }
            }
        }
        AudioRep::new(bands, frames, values)
    }

    /// The network input: log features standardized per channel over the
    /// whole clip.
    pub fn make_rep(&self, clip: &AudioClip) -> Result<AudioRep> {
        let mut rep = self.log_features(clip)?;
        rep.standardize();
        Ok(rep)
    }
}
