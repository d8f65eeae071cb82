use std::f64::consts::PI;

use avscene_core::frontend::{
    gammatone_matrix, hann_window, mel_matrix, resample, wav, AudioClip, FilterbankKind, Frontend, Stft, LOG_FLOOR,
    N_BINS, N_FFT, SAMPLE_RATE, SOURCE_RATE,
};

fn sine(freq: f64, rate: u32, len: usize, amp: f64) -> Vec<f32> {
    (0..len)
        .map(|n| (amp * (2.0 * PI * freq * n as f64 / rate as f64).sin()) as f32)
        .collect()
}

fn noise_clip(seconds: usize, seed: u64) -> AudioClip {
    // xorshift, so the clip does not depend on any library RNG
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let n = seconds * SAMPLE_RATE as usize;
    let left: Vec<f32> = (0..n).map(|_| (0.3 * next()) as f32).collect();
    let right: Vec<f32> = (0..n).map(|_| (0.3 * next()) as f32).collect();
    AudioClip::new(left, right, SAMPLE_RATE).unwrap()
}

/// Magnitude of the DFT of `x` at `freq`, scaled so a unit sine reads 1.
fn tone_amplitude(x: &[f32], freq: f64, rate: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, &v) in x.iter().enumerate() {
        let w = 2.0 * PI * freq * n as f64 / rate;
        re += v as f64 * w.cos();
        im -= v as f64 * w.sin();
    }
    2.0 * (re * re + im * im).sqrt() / x.len() as f64
}

#[test]
fn one_second_at_48k_becomes_44100_samples() {
    let clip = AudioClip::new(vec![0.0; 48_000], vec![0.0; 48_000], SOURCE_RATE).unwrap();
    let out = resample(&clip, SAMPLE_RATE).unwrap();
    assert_eq!(out.len(), 44_100);
    assert_eq!(out.sample_rate(), SAMPLE_RATE);
}

#[test]
fn resampled_tone_keeps_frequency_and_level() {
    let x = sine(1000.0, SOURCE_RATE, 48_000, 0.5);
    let clip = AudioClip::new(x.clone(), x, SOURCE_RATE).unwrap();
    let out = resample(&clip, SAMPLE_RATE).unwrap();
    // 1 Hz resolution over the full second; skip nothing, the tone is stationary
    let rate = SAMPLE_RATE as f64;
    let amps: Vec<f64> = (990..=1010).map(|f| tone_amplitude(out.left(), f as f64, rate)).collect();
    let peak = amps.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 990;
    assert!(peak.abs_diff(1000) <= 1, "peak at {peak} Hz");
    // interior only, away from filter start-up
    let interior = &out.left()[2048..out.len() - 2048];
    let amp = tone_amplitude(interior, 1000.0, rate);
    let db = 20.0 * (amp / 0.5).log10();
    assert!(db.abs() < 0.1, "passband error {db} dB");
}

#[test]
fn resampling_preserves_dc() {
    let clip = AudioClip::new(vec![0.5; 48_000], vec![0.5; 48_000], SOURCE_RATE).unwrap();
    let out = resample(&clip, SAMPLE_RATE).unwrap();
    for &v in &out.left()[1000..out.len() - 1000] {
        assert!((v - 0.5).abs() < 1e-3, "{v}");
    }
}

#[test]
fn unsupported_rates_are_rejected() {
    assert!(AudioClip::new(vec![0.0; 10], vec![0.0; 10], 22_050).is_err());
    assert!(AudioClip::new(vec![0.0; 10], vec![0.0; 9], SAMPLE_RATE).is_err());
}

#[test]
fn stft_frame_count_and_silence() {
    let stft = Stft::new();
    let p = stft.power(&vec![0.0; 44_100]);
    assert_eq!(p.len(), 50 * N_BINS);
    assert!(p.iter().all(|&v| v == 0.0));
    assert_eq!(Stft::n_frames(441_000), 500);
}

#[test]
fn stft_matches_direct_dft_of_a_windowed_frame() {
    let x: Vec<f32> = noise_clip(1, 3).left().to_vec();
    let stft = Stft::new();
    let p = stft.power(&x);
    let window = hann_window(N_FFT);
    // frame 10 is centered on sample 8820 and needs no padding
    let t = 10;
    let start = t * 882 - N_FFT / 2;
    for k in [0, 1, 40, 300, N_BINS - 1] {
        let (mut re, mut im) = (0.0, 0.0);
        for n in 0..N_FFT {
            let v = x[start + n] as f64 * window[n];
            let w = 2.0 * PI * (k * n) as f64 / N_FFT as f64;
            re += v * w.cos();
            im -= v * w.sin();
        }
        let expected = re * re + im * im;
        let got = p[t * N_BINS + k];
        assert!((got - expected).abs() <= 1e-9 * expected.max(1e-12), "bin {k}: {got} vs {expected}");
    }
}

#[test]
fn on_bin_tone_energy_is_split_by_the_hann_window() {
    // 1 kHz sits exactly on bin 40 of a 1764-point FFT at 44.1 kHz; the
    // periodic Hann window spreads it over bins 39..41 with amplitudes
    // 1/4, 1/2, 1/4, so the center bin holds 4/6 of the energy
    let x = sine(1000.0, SAMPLE_RATE, 44_100, 1.0);
    let p = Stft::new().power(&x);
    let t = 25;
    let frame = &p[t * N_BINS..(t + 1) * N_BINS];
    let total: f64 = frame.iter().sum();
    let peak = frame.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    assert_eq!(peak, 40);
    assert!((frame[40] / total - 2.0 / 3.0).abs() < 1e-6, "{}", frame[40] / total);
    assert!((frame[39] + frame[40] + frame[41]) / total > 0.999);
}

fn slaney_mel(f: f64) -> f64 {
    if f < 1000.0 {
        3.0 * f / 200.0
    } else {
        15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
    }
}

fn slaney_hz(m: f64) -> f64 {
    if m < 15.0 {
        200.0 * m / 3.0
    } else {
        1000.0 * (6.4f64.ln() * (m - 15.0) / 27.0).exp()
    }
}

#[test]
fn mel_centers_follow_the_slaney_scale() {
    let fb = mel_matrix(64, 44_100.0, N_FFT, 0.0, 22_050.0).unwrap();
    let top = slaney_mel(22_050.0);
    for (b, &c) in fb.centers_hz.iter().enumerate() {
        let expected = slaney_hz(top * (b + 1) as f64 / 65.0);
        assert!((c - expected).abs() <= 1e-6 * expected, "band {b}: {c} vs {expected}");
    }
    assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn mel_triangles_have_slaney_area_normalization() {
    let fb = mel_matrix(64, 44_100.0, N_FFT, 0.0, 22_050.0).unwrap();
    let top = slaney_mel(22_050.0);
    let edge = |i: usize| slaney_hz(top * i as f64 / 65.0);
    for b in [0, 10, 40, 63] {
        let (lo, mid, hi) = (edge(b), edge(b + 1), edge(b + 2));
        for k in 0..N_BINS {
            let f = k as f64 * 44_100.0 / N_FFT as f64;
            let tri = ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0);
            let expected = tri * 2.0 / (hi - lo);
            let got = fb.row(b)[k];
            assert!((got - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "band {b} bin {k}");
        }
    }
}

#[test]
fn flat_spectrum_excites_every_band() {
    for fb in [
        mel_matrix(64, 44_100.0, N_FFT, 0.0, 22_050.0).unwrap(),
        gammatone_matrix(64, 44_100.0, N_FFT, 20.0, 22_050.0).unwrap(),
    ] {
        let out = fb.apply(&vec![1.0; N_BINS], 1);
        assert!(out.iter().all(|&v| v > 0.0), "{:?}", fb.kind);
    }
}

#[test]
fn gammatone_layout() {
    let fb = gammatone_matrix(64, 44_100.0, N_FFT, 20.0, 22_050.0).unwrap();
    assert_eq!((fb.n_bands, fb.n_bins), (64, 883));
    assert_eq!(fb.weights.len(), 64 * 883);
    // equal steps on the ERB-number scale ln(f + EarQ * minBW)
    let erb_number = |f: f64| (f + 9.26449 * 24.7).ln();
    let steps: Vec<f64> = fb.centers_hz.windows(2).map(|w| erb_number(w[1]) - erb_number(w[0])).collect();
    for s in &steps {
        assert!((s - steps[0]).abs() < 1e-9);
    }
    assert!((fb.centers_hz[0] - 20.0).abs() < 1e-9);
    assert!(fb.centers_hz[63] < 22_050.0);
    for b in 0..64 {
        let max = fb.row(b).iter().copied().fold(f64::MIN, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gammatone_peaks_sit_near_their_centers() {
    let fb = gammatone_matrix(64, 44_100.0, N_FFT, 20.0, 22_050.0).unwrap();
    let peaks = fb.peak_bins();
    assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
    for (b, (&peak, &cf)) in peaks.iter().zip(&fb.centers_hz).enumerate() {
        if cf < 20_000.0 {
            let nearest = (cf * N_FFT as f64 / 44_100.0).round() as usize;
            assert_eq!(peak, nearest, "band {b} at {cf} Hz");
        }
    }
}

#[test]
fn gammatone_weights_match_reference_values() {
    // from an independent numpy port of the Auditory Toolbox fft2gammatonemx
    let golden = [
        (0, 0, 0.7975375011872549),
        (0, 1, 1.0),
        (0, 3, 0.050842502976106554),
        (10, 5, 0.014648923343435283),
        (20, 10, 0.0017513266077135812),
        (32, 85, 1.0),
        (32, 80, 0.6551682812775947),
        (50, 300, 0.48493379394391334),
        (63, 800, 0.9549872309790249),
        (63, 882, 0.3880452802492052),
    ];
    let fb = gammatone_matrix(64, 44_100.0, N_FFT, 20.0, 22_050.0).unwrap();
    for (b, k, expected) in golden {
        let got = fb.row(b)[k];
        assert!((got - expected).abs() <= 1e-9 * expected.max(1e-3), "({b}, {k}): {got} vs {expected}");
    }
    assert!((fb.centers_hz[31] - 1965.9944370591115).abs() < 1e-8);
    assert!((fb.centers_hz[63] - 20539.071515481297).abs() < 1e-7);
}

#[test]
fn representation_shape_law() {
    for kind in [FilterbankKind::Gammatone, FilterbankKind::Mel] {
        let fe = Frontend::new(kind);
        assert_eq!(fe.make_rep(&noise_clip(1, 1)).unwrap().shape(), [64, 50, 3]);
        assert_eq!(fe.make_rep(&noise_clip(10, 2)).unwrap().shape(), [64, 500, 3]);
    }
}

#[test]
fn representation_is_deterministic_bytewise() {
    for kind in [FilterbankKind::Gammatone, FilterbankKind::Mel] {
        let clip = noise_clip(1, 7);
        let a = Frontend::new(kind).make_rep(&clip).unwrap();
        let b = Frontend::new(kind).make_rep(&clip).unwrap();
        let bits = |r: &avscene_core::frontend::AudioRep| r.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn identical_channels_give_a_floor_difference_channel() {
    let x = noise_clip(1, 4).left().to_vec();
    let clip = AudioClip::new(x.clone(), x, SAMPLE_RATE).unwrap();
    let rep = Frontend::new(FilterbankKind::Gammatone).log_features(&clip).unwrap();
    let floor = LOG_FLOOR.ln() as f32;
    for b in 0..64 {
        for t in 0..50 {
            assert_eq!(rep.get(b, t, 2), floor);
            assert_eq!(rep.get(b, t, 0), rep.get(b, t, 1));
        }
    }
}

#[test]
fn standardized_channels_have_zero_mean_unit_variance() {
    let rep = Frontend::new(FilterbankKind::Mel).make_rep(&noise_clip(1, 5)).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = rep.values().iter().skip(c).step_by(3).map(|&v| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-3, "channel {c}: {mean} {var}");
    }
}

#[test]
fn long_clip_slices_agree_with_per_second_features() {
    let fe = Frontend::new(FilterbankKind::Gammatone);
    let clip = noise_clip(10, 9);
    let full = fe.log_features(&clip).unwrap();
    for s in 0..10 {
        let part = fe.log_features(&clip.slice(s * 44_100, 44_100)).unwrap();
        let cut = full.slice_frames(s * 50, 50).unwrap();
        // frame 0 of a slice is reflect-padded on the left; the rest see identical samples
        for b in 0..64 {
            for t in 1..50 {
                for c in 0..3 {
                    let (x, y) = (part.get(b, t, c), cut.get(b, t, c));
                    assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "second {s} band {b} frame {t}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn frontend_rejects_wrong_rate_and_empty_input() {
    let fe = Frontend::new(FilterbankKind::Mel);
    let at48 = AudioClip::new(vec![0.0; 480], vec![0.0; 480], SOURCE_RATE).unwrap();
    assert!(fe.make_rep(&at48).is_err());
    let empty = AudioClip::new(vec![], vec![], SAMPLE_RATE).unwrap();
    assert!(fe.make_rep(&empty).is_err());
}

#[test]
fn wav_round_trip_is_within_one_quantization_step() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let clip = noise_clip(1, 11);
    wav::write(&path, &clip).unwrap();
    let back = wav::read(&path).unwrap();
    assert_eq!(back.len(), clip.len());
    assert_eq!(back.sample_rate(), SAMPLE_RATE);
    for (a, b) in clip.left().iter().zip(back.left()) {
        assert!((a - b).abs() <= 1.0 / 32767.0);
    }
}

#[test]
fn mono_wav_is_a_channel_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mono.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for _ in 0..100 {
        w.write_sample(0i16).unwrap();
    }
    w.finalize().unwrap();
    let err = wav::read(&path).unwrap_err().to_string();
    assert!(err.contains("stereo"), "{err}");
}
