use std::f64::consts::PI;

use super::{AudioClip, SAMPLE_RATE, SOURCE_RATE};
use crate::error::{Error, Result};

const KAISER_BETA: f64 = 14.769656459379492;
const ZERO_CROSSINGS: usize = 64;
const ROLLOFF: f64 = 0.9475937167399596;

/// 48 kHz to 44.1 kHz is 147 output samples per 160 input samples.
const UP: usize = 147;
const DOWN: usize = 160;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 1.0);
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Filter taps for every output phase. Phase `p` is centered at input
/// position `base + p / UP`; tap `j` multiplies input `base - half + j`.
struct Polyphase {
    half: usize,
    taps: Vec<Vec<f64>>,
}

impl Polyphase {
    fn new() -> Self {
        let cutoff = ROLLOFF * UP as f64 / DOWN as f64;
        let reach = ZERO_CROSSINGS as f64 / cutoff;
        let half = reach.ceil() as usize;
        let norm = bessel_i0(KAISER_BETA);
        let taps = (0..UP)
            .map(|p| {
                let frac = p as f64 / UP as f64;
                let mut phase: Vec<f64> = (0..=2 * half)
                    .map(|j| {
                        let d = j as f64 - half as f64 - frac;
                        let u = d / reach;
                        if u.abs() > 1.0 {
                            return 0.0;
                        }
                        let x = cutoff * d;
                        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
                        cutoff * sinc * bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / norm
                    })
                    .collect();
                let dc: f64 = phase.iter().sum();
                phase.iter_mut().for_each(|w| *w /= dc);
                phase
            })
            .collect();
        Self { half, taps }
    }

    fn run(&self, x: &[f32]) -> Vec<f32> {
        let out_len = (x.len() * UP + DOWN / 2) / DOWN;
        (0..out_len)
            .map(|n| {
                let pos = n * DOWN;
                let (base, phase) = (pos / UP, pos % UP);
                let taps = &self.taps[phase];
                let first = base as isize - self.half as isize;
                let mut acc = 0.0;
                for (j, &w) in taps.iter().enumerate() {
                    let i = first + j as isize;
                    if i >= 0 && (i as usize) < x.len() {
                        acc += w * x[i as usize] as f64;
                    }
                }
                acc as f32
            })
            .collect()
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc (64 zero crossings,
/// beta 14.77) evaluated in polyphase form. Each phase is normalized to
/// unit DC gain. Output length is `round(len * 44100 / 48000)`.
pub fn resample(clip: &AudioClip, target_hz: u32) -> Result<AudioClip> {
    if clip.sample_rate() == target_hz {
        return Ok(clip.clone());
    }
    if clip.sample_rate() != SOURCE_RATE || target_hz != SAMPLE_RATE {
        return Err(Error::Audio(format!(
            "unsupported resampling {} Hz -> {target_hz} Hz (only {SOURCE_RATE} -> {SAMPLE_RATE})",
            clip.sample_rate()
        )));
    }
    let filter = Polyphase::new();
    AudioClip::new(filter.run(clip.left()), filter.run(clip.right()), target_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_tabulated_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239871823604442).abs() < 1e-11);
    }

    #[test]
    fn phases_have_unit_dc_gain() {
        let f = Polyphase::new();
        assert_eq!(f.taps.len(), UP);
        for phase in &f.taps {
            assert!((phase.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
