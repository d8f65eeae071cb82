//! Procedural audio-visual dataset with complementary cues. Audio is a
//! class-specific tone chord plus Gaussian noise; frames are class-colored
//! drifting stripes at a class-specific orientation plus pixel noise. One
//! class pair shares its audio signature and another pair its visual
//! signature, so each modality alone confuses one pair.
//!
//! Every sample is a pure function of `(seed, example, position)`, so any
//! window can be generated lazily and agrees with the full clip.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::frames::write_png_rgb8;
use super::manifest::MANIFEST_HEADER;
use super::{ExampleSource, Split, FRAMES_PER_CLIP, SAMPLES_PER_FRAME};
use crate::error::{Error, Result};
use crate::frontend::{wav, AudioClip, Frontend, SAMPLE_RATE};
use crate::labels::{SceneClass, N_CLASSES};
use crate::visual_net::{FrameNorm, FrameSequence, FPS, FRAME_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioSignature {
    pub tones_hz: Vec<f64>,
    pub tone_amplitude: f64,
    pub noise_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualSignature {
    pub color: [u8; 3],
    pub stripe_angle_deg: f64,
    pub stripe_period_px: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub examples_per_class: usize,
    pub seed: u64,
    pub frame_size: usize,
    pub train_fraction: f64,
    /// Uniform pixel noise amplitude in 8-bit levels.
    pub pixel_noise: u8,
    /// Indexed by class.
    pub audio: Vec<AudioSignature>,
    pub visual: Vec<VisualSignature>,
    /// Class pairs with identical audio signatures.
    pub audio_ambiguous: Vec<(usize, usize)>,
    /// Class pairs with identical visual signatures.
    pub visual_ambiguous: Vec<(usize, usize)>,
}

impl SyntheticSpec {
    /// Default tables: airport and shopping mall sound alike, bus and metro
    /// look alike.
    pub fn new(examples_per_class: usize, seed: u64) -> Self {
        let audio_ambiguous = (SceneClass::Airport.index(), SceneClass::ShoppingMall.index());
        let visual_ambiguous = (SceneClass::Bus.index(), SceneClass::Metro.index());
        let audio = (0..N_CLASSES)
            .map(|c| {
                // the ambiguous pair shares the first chord
                let k = if c == audio_ambiguous.1 { 0 } else { c.saturating_sub(1) };
                let f = 250.0 * 1.5f64.powi(k as i32);
                AudioSignature {
                    tones_hz: vec![f, 2.3 * f],
                    tone_amplitude: 0.1,
                    noise_std: 0.05,
                }
            })
            .collect();
        const PALETTE: [[u8; 3]; N_CLASSES] = [
            [200, 40, 40],
            [40, 160, 40],
            [40, 60, 200],
            [210, 190, 40],
            [170, 50, 180],
            [40, 180, 180],
            [230, 120, 30],
            [120, 120, 120],
            [120, 120, 120],
            [90, 200, 110],
        ];
        let visual = (0..N_CLASSES)
            .map(|c| VisualSignature {
                color: PALETTE[c],
                stripe_angle_deg: if c == visual_ambiguous.1 { 7.0 * 18.0 } else { c as f64 * 18.0 },
                stripe_period_px: 24.0,
            })
            .collect();
        Self {
            examples_per_class,
            seed,
            frame_size: FRAME_SIZE,
            train_fraction: 0.7,
            pixel_noise: 24,
            audio,
            visual,
            audio_ambiguous: vec![audio_ambiguous],
            visual_ambiguous: vec![visual_ambiguous],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.audio.len() != N_CLASSES || self.visual.len() != N_CLASSES {
            return bad(format!("signature tables must have {N_CLASSES} rows"));
        }
        if self.examples_per_class == 0 || self.frame_size == 0 {
            return bad("examples_per_class and frame_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return bad(format!("train_fraction {} not in [0, 1]", self.train_fraction));
        }
        if self.audio_ambiguous.is_empty() || self.visual_ambiguous.is_empty() {
            return bad("needs at least one audio-ambiguous and one visually ambiguous pair".into());
        }
        for i in 0..N_CLASSES {
            for j in i + 1..N_CLASSES {
                let pair = (i, j);
                let a_same = self.audio[i] == self.audio[j];
                let v_same = self.visual[i] == self.visual[j];
                if a_same != self.audio_ambiguous.contains(&pair) {
                    return bad(format!("audio signatures of classes {i} and {j} disagree with the ambiguity plan"));
                }
                if v_same != self.visual_ambiguous.contains(&pair) {
                    return bad(format!("visual signatures of classes {i} and {j} disagree with the ambiguity plan"));
                }
                if a_same && v_same {
                    return bad(format!("classes {i} and {j} are identical in both modalities"));
                }
            }
        }
        Ok(())
    }

    /// Classes that appear in no audio-ambiguous pair.
    pub fn audio_separable(&self) -> Vec<usize> {
        separable(&self.audio_ambiguous)
    }

    pub fn visually_separable(&self) -> Vec<usize> {
        separable(&self.visual_ambiguous)
    }
}

fn separable(pairs: &[(usize, usize)]) -> Vec<usize> {
    (0..N_CLASSES)
        .filter(|c| !pairs.iter().any(|&(a, b)| a == *c || b == *c))
        .collect()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key(parts: &[u64]) -> u64 {
    parts.iter().fold(0u64, |h, &p| splitmix(h ^ splitmix(p)))
}

const TAG_EXAMPLE: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_FRAME: u64 = 3;
const TAG_SPLIT: u64 = 4;

/// Per-example random draws fixed at construction.
#[derive(Clone, Debug)]
struct ExampleParams {
    /// `[tone][channel]`.
    phases: Vec<[f64; 2]>,
    gains: Vec<f64>,
    stripe_phase: f64,
    stripe_drift: f64,
    color_shift: [i16; 3],
}

/// Lazily generated dataset; examples are ordered class-major.
pub struct SyntheticDataset {
    spec: SyntheticSpec,
    splits: Vec<Split>,
    params: Vec<ExampleParams>,
}

impl SyntheticDataset {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.examples_per_class * N_CLASSES;
        let mut split_rng = ChaCha8Rng::seed_from_u64(key(&[spec.seed, TAG_SPLIT]));
        let mut splits = vec![Split::Val; n];
        let n_train = (spec.examples_per_class as f64 * spec.train_fraction).round() as usize;
        for c in 0..N_CLASSES {
            let mut local: Vec<usize> = (0..spec.examples_per_class).collect();
            rand::seq::SliceRandom::shuffle(local.as_mut_slice(), &mut split_rng);
            for &k in &local[..n_train] {
                splits[c * spec.examples_per_class + k] = Split::Train;
            }
        }
        let params = (0..n)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(key(&[spec.seed, TAG_EXAMPLE, i as u64]));
                let sig = &spec.audio[i / spec.examples_per_class];
                ExampleParams {
                    phases: sig
                        .tones_hz
                        .iter()
                        .map(|_| [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)])
                        .collect(),
                    gains: sig.tones_hz.iter().map(|_| rng.random_range(0.7..1.3)).collect(),
                    stripe_phase: rng.random_range(0.0..1.0),
                    stripe_drift: rng.random_range(-0.1..0.1),
                    color_shift: [(); 3].map(|_| rng.random_range(-12..=12)),
                }
            })
            .collect();
        Ok(Self { spec, splits, params })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn class_of(&self, index: usize) -> usize {
        index / self.spec.examples_per_class
    }

    /// Samples `[start, start + len)` of one channel.
    fn channel(&self, index: usize, channel: usize, start: usize, len: usize) -> Vec<f32> {
        let sig = &self.spec.audio[self.class_of(index)];
        let p = &self.params[index];
        let sr = SAMPLE_RATE as f64;
        let mut out = vec![0.0f32; len];
        let mut segment = usize::MAX;
        let mut noise = Vec::new();
        for (j, v) in out.iter_mut().enumerate() {
            let n = start + j;
            let seg = n / SAMPLES_PER_FRAME;
            if seg != segment {
                segment = seg;
                let mut rng = ChaCha8Rng::seed_from_u64(key(&[
                    self.spec.seed,
                    TAG_NOISE,
                    index as u64,
                    seg as u64,
                    channel as u64,
                ]));
                noise = (0..SAMPLES_PER_FRAME)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect::<Vec<f64>>();
            }
            let t = n as f64 / sr;
            let tones: f64 = sig
                .tones_hz
                .iter()
                .enumerate()
                .map(|(k, &f)| p.gains[k] * (2.0 * PI * f * t + p.phases[k][channel]).sin())
                .sum();
            *v = (sig.tone_amplitude * tones + sig.noise_std * noise[n % SAMPLES_PER_FRAME]) as f32;
        }
        out
    }

    /// One RGB8 frame.
    pub fn frame_rgb8(&self, index: usize, frame: usize) -> Vec<u8> {
        let sig = &self.spec.visual[self.class_of(index)];
        let p = &self.params[index];
        let size = self.spec.frame_size;
        let (s, c) = sig.stripe_angle_deg.to_radians().sin_cos();
        let offset = p.stripe_phase + p.stripe_drift * frame as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(key(&[self.spec.seed, TAG_FRAME, index as u64, frame as u64]));
        let mut noise = vec![0u8; size * size * 3];
        rng.fill_bytes(&mut noise);
        let amp = self.spec.pixel_noise as i32;
        let jitter: Vec<i32> = (0..256).map(|b| b % (2 * amp + 1) - amp).collect();
        let base: [[i32; 3]; 2] = [1.0, 0.55].map(|bright| {
            [0, 1, 2].map(|ch| (sig.color[ch] as f64 * bright + p.color_shift[ch] as f64).round() as i32)
        });
        let mut out = vec![0u8; size * size * 3];
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 * c + y as f64 * s) / sig.stripe_period_px + offset;
                let level = &base[(u.rem_euclid(1.0) >= 0.5) as usize];
                let px = (y * size + x) * 3;
                for ch in 0..3 {
                    out[px + ch] = (level[ch] + jitter[noise[px + ch] as usize]).clamp(0, 255) as u8;
                }
            }
        }
        out
    }

    /// Writes WAV files, PNG frames, `manifest.csv` and `synthetic.json`
    /// under `dir`; returns the manifest path.
    pub fn write_to_disk(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(&dir.join("audio"))?;
        let manifest_path = dir.join("manifest.csv");
        let mut writer = csv::Writer::from_path(&manifest_path)?;
        writer.write_record(MANIFEST_HEADER)?;
        for i in 0..self.len() {
            let id = self.id(i);
            let audio_rel = format!("audio/{id}.wav");
            let frames_rel = format!("frames/{id}");
            wav::write(dir.join(&audio_rel), &self.audio(i, 0, FRAMES_PER_CLIP)?)?;
            let frames_dir = dir.join(&frames_rel);
            mkdir(&frames_dir)?;
            for f in 0..FRAMES_PER_CLIP {
                let size = self.spec.frame_size;
                write_png_rgb8(frames_dir.join(format!("frame_{f:03}.png")), &self.frame_rgb8(i, f), size, size)?;
            }
            let location = format!("loc{}", i % self.spec.examples_per_class % 4);
            writer.write_record([
                id.as_str(),
                &audio_rel,
                &frames_rel,
                self.label(i).name(),
                "synthetic",
                &location,
                self.split(i).name(),
            ])?;
        }
        writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
        let sidecar = dir.join("synthetic.json");
        let json = serde_json::to_string_pretty(&self.spec)?;
        fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
        Ok(manifest_path)
    }

    /// Nearest-centroid classification of mean log band energies (left
    /// channel, center second of each clip), centroids from the training
    /// split, scored on validation.
    pub fn self_test(&self, frontend: &Frontend) -> Result<SelfTest> {
        let center = (FRAMES_PER_CLIP - FPS) / 2;
        let mut feats = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let rep = frontend.log_features(&self.audio(i, center, FPS)?)?;
            let [bands, frames, _] = rep.shape();
            feats.push(
                (0..bands)
                    .map(|b| (0..frames).map(|t| rep.get(b, t, 0) as f64).sum::<f64>() / frames as f64)
                    .collect::<Vec<f64>>(),
            );
        }
        let dim = feats[0].len();
        let mut centroids = vec![vec![0.0; dim]; N_CLASSES];
        let mut counts = [0usize; N_CLASSES];
        for i in self.indices(Split::Train) {
            let c = self.class_of(i);
            counts[c] += 1;
            for (a, v) in centroids[c].iter_mut().zip(&feats[i]) {
                *a += v;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            centroid.iter_mut().for_each(|a| *a /= counts[c].max(1) as f64);
        }
        let separable = self.spec.audio_separable();
        let (mut sep_hit, mut sep_n, mut amb_hit, mut amb_n) = (0, 0, 0, 0);
        for i in self.indices(Split::Val) {
            let dist = |c: &Vec<f64>| c.iter().zip(&feats[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let pred = (0..N_CLASSES)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .expect("classes");
            let truth = self.class_of(i);
            if separable.contains(&truth) {
                sep_n += 1;
                sep_hit += (pred == truth) as usize;
            } else {
                amb_n += 1;
                amb_hit += (pred == truth) as usize;
            }
        }
        Ok(SelfTest {
            separable_accuracy: sep_hit as f64 / sep_n.max(1) as f64,
            ambiguous_accuracy: amb_hit as f64 / amb_n.max(1) as f64,
            n_separable: sep_n,
            n_ambiguous: amb_n,
        })
    }
}

/// Audio nearest-centroid scores on the validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfTest {
    pub separable_accuracy: f64,
    /// Accuracy on classes of audio-ambiguous pairs; near 0.5 when the pair
    /// is indistinguishable.
    pub ambiguous_accuracy: f64,
    pub n_separable: usize,
    pub n_ambiguous: usize,
}

impl ExampleSource for SyntheticDataset {
    fn len(&self) -> usize {
        self.splits.len()
    }

    fn id(&self, index: usize) -> String {
        let c = SceneClass::from_index(self.class_of(index)).expect("class");
        format!("syn_{}_{:04}", c.name(), index % self.spec.examples_per_class)
    }

    fn label(&self, index: usize) -> SceneClass {
        SceneClass::from_index(self.class_of(index)).expect("class")
    }

    fn split(&self, index: usize) -> Split {
        self.splits[index]
    }

    fn frame_count(&self, _index: usize) -> usize {
        FRAMES_PER_CLIP
    }

    fn audio(&self, index: usize, start: usize, count: usize) -> Result<AudioClip> {
        if start + count > FRAMES_PER_CLIP || count == 0 {
            return Err(Error::Config(format!(
                "audio window {start}..{} outside {FRAMES_PER_CLIP} frames",
                start + count
            )));
        }
        let (s, n) = (start * SAMPLES_PER_FRAME, count * SAMPLES_PER_FRAME);
        AudioClip::new(self.channel(index, 0, s, n), self.channel(index, 1, s, n), SAMPLE_RATE)
    }

    fn frames(&self, index: usize, start: usize, count: usize, norm: FrameNorm) -> Result<FrameSequence> {
        if start + count > FRAMES_PER_CLIP || count == 0 {
            return Err(Error::Config(format!(
                "frame window {start}..{} outside {FRAMES_PER_CLIP} frames",
                start + count
            )));
        }
        let images: Vec<Vec<u8>> = (start..start + count).map(|f| self.frame_rgb8(index, f)).collect();
        let size = self.spec.frame_size;
        FrameSequence::from_rgb8(&images, size, size, norm)
    }
}
