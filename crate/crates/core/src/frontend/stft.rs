use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{HOP, N_BINS, N_FFT};

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into `0..len` of position `i` of a signal reflected about its
/// first and last samples (edge samples not repeated).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Short-time power spectrum with a 1764-point periodic Hann window and a
/// hop of 882 samples.
///
/// Frames are centered: frame `t` covers samples around `t * HOP`, with the
/// signal reflect-padded by half a window at both ends. A signal of `n`
/// samples yields `max(1, n / HOP)` frames, so one second at 44.1 kHz gives
/// exactly 50.
pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window: hann_window(N_FFT),
        }
    }

    pub fn n_frames(len: usize) -> usize {
        (len / HOP).max(1)
    }

    /// Power spectrogram in frame-major order: `out[t * N_BINS + k]`.
    pub fn power(&self, samples: &[f32]) -> Vec<f64> {
        let frames = Self::n_frames(samples.len());
        let mut out = vec![0.0; frames * N_BINS];
        if samples.is_empty() {
            return out;
        }
        let half = (N_FFT / 2) as isize;
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let start = (t * HOP) as isize - half;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = reflect(start + j as isize, samples.len());
                *slot = Complex::new(samples[idx] as f64 * self.window[j], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in buf[..N_BINS].iter().enumerate() {
                out[t * N_BINS + k] = v.norm_sqr();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_convention() {
        // np.pad([0,1,2,3], 3, mode="reflect") -> [3,2,1,0,1,2,3,2,1,0]
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn one_second_is_fifty_frames() {
        assert_eq!(Stft::n_frames(44_100), 50);
        assert_eq!(Stft::n_frames(441_000), 500);
        assert_eq!(Stft::n_frames(10), 1);
    }

    #[test]
    fn silence_has_no_power() {
        let p = Stft::new().power(&vec![0.0; 44_100]);
        assert_eq!(p.len(), 50 * N_BINS);
        assert!(p.iter().all(|&v| v == 0.0));
    }
}
