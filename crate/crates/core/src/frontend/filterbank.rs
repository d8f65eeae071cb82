use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest gammatone center frequency.
pub const GAMMATONE_FMIN: f64 = 20.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterbankKind {
    #[default]
    Gammatone,
    Mel,
}

impl std::str::FromStr for FilterbankKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gammatone" => Ok(Self::Gammatone),
            "mel" => Ok(Self::Mel),
            other => Err(format!("unknown filterbank `{other}` (expected gammatone or mel)")),
        }
    }
}

/// `n_bands x n_bins` nonnegative weights applied to a one-sided power
/// spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankMatrix {
    pub kind: FilterbankKind,
    pub n_bands: usize,
    pub n_bins: usize,
    /// Row-major, `weights[band * n_bins + bin]`.
    pub weights: Vec<f64>,
    pub centers_hz: Vec<f64>,
}

impl FilterbankMatrix {
    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.n_bins..(band + 1) * self.n_bins]
    }

    /// Index of the largest weight of each row.
    pub fn peak_bins(&self) -> Vec<usize> {
        (0..self.n_bands).map(|b| avscene_autodiff::argmax(self.row(b))).collect()
    }

    /// `out[t * n_bands + b] = sum_k power[t * n_bins + k] * w[b, k]`.
    pub fn apply(&self, power: &[f64], frames: usize) -> Vec<f64> {
        use avscene_autodiff::Float;
        let mut out = vec![0.0; frames * self.n_bands];
        f64::gemm(
            frames,
            self.n_bins,
            self.n_bands,
            1.0,
            power,
            (self.n_bins as isize, 1),
            &self.weights,
            (1, self.n_bins as isize),
            0.0,
            &mut out,
            (self.n_bands as isize, 1),
        );
        out
    }
}

fn check_range(n_bands: usize, sr: f64, fmin: f64, fmax: f64) -> Result<()> {
    if n_bands == 0 {
        return Err(Error::Config("filterbank needs at least one band".into()));
    }
    if !(fmin >= 0.0 && fmin < fmax && fmax <= sr / 2.0) {
        return Err(Error::Config(format!(
            "invalid filterbank range: need 0 <= fmin < fmax <= {} Hz, got fmin={fmin}, fmax={fmax}",
            sr / 2.0
        )));
    }
    Ok(())
}

const MEL_F_SP: f64 = 200.0 / 3.0;
const MEL_MIN_LOG_HZ: f64 = 1000.0;

fn mel_logstep() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub(crate) fn hz_to_mel(f: f64) -> f64 {
    let min_log_mel = MEL_MIN_LOG_HZ / MEL_F_SP;
    if f >= MEL_MIN_LOG_HZ {
        min_log_mel + (f / MEL_MIN_LOG_HZ).ln() / mel_logstep()
    } else {
        f / MEL_F_SP
    }
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    let min_log_mel = MEL_MIN_LOG_HZ / MEL_F_SP;
    if m >= min_log_mel {
        MEL_MIN_LOG_HZ * (mel_logstep() * (m - min_log_mel)).exp()
    } else {
        m * MEL_F_SP
    }
}

/// Triangular mel filters on the Slaney scale, each scaled by
/// `2 / (f_hi - f_lo)` so all filters have equal area.
pub fn mel_matrix(n_bands: usize, sr: f64, n_fft: usize, fmin: f64, fmax: f64) -> Result<FilterbankMatrix> {
    check_range(n_bands, sr, fmin, fmax)?;
    let n_bins = n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_bands + 1) as f64))
        .collect();
    let mut weights = vec![0.0; n_bands * n_bins];
    for b in 0..n_bands {
        let (f0, f1, f2) = (edges[b], edges[b + 1], edges[b + 2]);
        let norm = 2.0 / (f2 - f0);
        for k in 0..n_bins {
            let f = k as f64 * sr / n_fft as f64;
            let rising = (f - f0) / (f1 - f0);
            let falling = (f2 - f) / (f2 - f1);
            weights[b * n_bins + k] = rising.min(falling).max(0.0) * norm;
        }
    }
    Ok(FilterbankMatrix {
        kind: FilterbankKind::Mel,
        n_bands,
        n_bins,
        weights,
        centers_hz: edges[1..=n_bands].to_vec(),
    })
}

const EAR_Q: f64 = 9.26449;
const MIN_BW: f64 = 24.7;

/// Equivalent rectangular bandwidth, `24.7 * (4.37 f / 1000 + 1)`.
pub fn erb(f: f64) -> f64 {
    f / EAR_Q + MIN_BW
}

/// Center frequencies equally spaced on the ERB-number scale, increasing,
/// with the lowest at `fmin` and the highest one step below `fmax`.
pub fn erb_space(n_bands: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    let c = EAR_Q * MIN_BW;
    let step = ((fmin + c).ln() - (fmax + c).ln()) / n_bands as f64;
    let mut centers: Vec<f64> = (1..=n_bands)
        .map(|i| -c + (i as f64 * step).exp() * (fmax + c))
        .collect();
    centers.reverse();
    centers
}

/// Magnitude responses of fourth-order gammatone filters sampled on the
/// FFT grid (the Auditory Toolbox FFT-weight construction), each row
/// scaled to a maximum of 1.
pub fn gammatone_matrix(n_bands: usize, sr: f64, n_fft: usize, fmin: f64, fmax: f64) -> Result<FilterbankMatrix> {
    check_range(n_bands, sr, fmin, fmax)?;
    if fmin <= 0.0 {
        return Err(Error::Config(format!("gammatone fmin must be positive, got {fmin}")));
    }
    let n_bins = n_fft / 2 + 1;
    let centers = erb_space(n_bands, fmin, fmax);
    let t = 1.0 / sr;
    let ucirc: Vec<Complex<f64>> = (0..n_bins)
        .map(|k| Complex::from_polar(1.0, 2.0 * PI * k as f64 / n_fft as f64))
        .collect();
    let (sq_plus, sq_minus) = ((3.0 + 2f64.powf(1.5)).sqrt(), (3.0 - 2f64.powf(1.5)).sqrt());
    let mut weights = vec![0.0; n_bands * n_bins];
    for (b, &cf) in centers.iter().enumerate() {
        let bw = 1.019 * 2.0 * PI * erb(cf);
        let pole = Complex::from_polar((-bw * t).exp(), 2.0 * PI * cf * t);
        let (cos, sin, decay) = ((2.0 * PI * cf * t).cos(), (2.0 * PI * cf * t).sin(), (bw * t).exp());
        // zeros of the four cascaded second-order sections
        let zeros = [
            (cos + sq_plus * sin) / decay,
            (cos - sq_plus * sin) / decay,
            (cos + sq_minus * sin) / decay,
            (cos - sq_minus * sin) / decay,
        ];
        let e4 = Complex::from_polar(1.0, 4.0 * PI * cf * t);
        let e2 = Complex::from_polar((-bw * t).exp(), 2.0 * PI * cf * t);
        let section = |s: f64| -2.0 * e4 * t + 2.0 * e2 * t * (cos + s * sin);
        let denom = -2.0 / (2.0 * bw * t).exp() - 2.0 * e4 + 2.0 * (1.0 + e4) / decay;
        let gain = (section(-sq_minus) * section(sq_minus) * section(-sq_plus) * section(sq_plus) / denom.powi(4)).norm();
        let row = &mut weights[b * n_bins..(b + 1) * n_bins];
        for (w, &u) in row.iter_mut().zip(&ucirc) {
            let num: f64 = zeros.iter().map(|&z| (u - z).norm()).product();
            let poles = ((pole - u) * (pole.conj() - u)).norm().powi(-4);
            *w = t.powi(4) / gain * num * poles;
        }
        let max = row.iter().copied().fold(0.0, f64::max);
        row.iter_mut().for_each(|w| *w /= max);
    }
    Ok(FilterbankMatrix {
        kind: FilterbankKind::Gammatone,
        n_bands,
        n_bins,
        weights,
        centers_hz: centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slaney_mel_breakpoint() {
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        assert!((mel_to_hz(hz_to_mel(6400.0)) - 6400.0).abs() < 1e-9);
        assert!((hz_to_mel(6400.0) - 42.0).abs() < 1e-12);
    }

    #[test]
    fn bad_ranges_are_rejected() {
        assert!(mel_matrix(64, 44100.0, 1764, 100.0, 50.0).is_err());
        assert!(mel_matrix(64, 44100.0, 1764, 0.0, 30000.0).is_err());
        assert!(gammatone_matrix(0, 44100.0, 1764, 20.0, 22050.0).is_err());
    }
}
