use std::collections::HashSet;
use std::path::{Path, PathBuf};

use hound::WavReader;
use serde::{Deserialize, Serialize};

use super::frames::read_png_rgb8;
use super::{ExampleSource, Split, FRAMES_PER_CLIP, SAMPLES_PER_FRAME};
use crate::error::{Error, Result};
use crate::frontend::{wav, AudioClip, HOP, SAMPLE_RATE};
use crate::labels::SceneClass;
use crate::visual_net::{FrameNorm, FrameSequence, FRAME_SIZE};

pub const MANIFEST_HEADER: [&str; 7] = ["id", "audio_path", "frames_dir", "label", "city", "location", "split"];

/// One example of the on-disk layout. Relative paths in the CSV are
/// resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub audio_path: PathBuf,
    pub frames_dir: PathBuf,
    pub label: SceneClass,
    pub city: String,
    pub location: String,
    pub split: Split,
}

#[derive(Deserialize)]
struct Row {
    id: String,
    audio_path: String,
    frames_dir: String,
    label: String,
    city: String,
    location: String,
    split: String,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::data(path, "empty manifest"));
    }
    if header != MANIFEST_HEADER {
        return Err(Error::data(
            path,
            format!("manifest header must be `{}`, found `{}`", MANIFEST_HEADER.join(","), header.join(",")),
        ));
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let n = i + 1;
        let row = row.map_err(|e| Error::Manifest {
            row: n,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Manifest { row: n, message };
        let label = row.label.parse::<SceneClass>().map_err(|e| bad(e.to_string()))?;
        let split = row.split.parse::<Split>().map_err(bad)?;
        if !seen.insert(row.id.clone()) {
            return Err(bad(format!("duplicate id `{}`", row.id)));
        }
        let audio_path = base.join(&row.audio_path);
        let frames_dir = base.join(&row.frames_dir);
        if !audio_path.is_file() {
            return Err(bad(format!("audio file `{}` does not exist", audio_path.display())));
        }
        if !frames_dir.is_dir() {
            return Err(bad(format!("frames directory `{}` does not exist", frames_dir.display())));
        }
        entries.push(ManifestEntry {
            id: row.id,
            audio_path,
            frames_dir,
            label,
            city: row.city,
            location: row.location,
            split,
        });
    }
    if entries.is_empty() {
        return Err(Error::data(path, "empty manifest"));
    }
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub n_train: usize,
    pub n_val: usize,
    pub train: f64,
    pub val: f64,
}

pub fn split_report(entries: &[ManifestEntry]) -> SplitReport {
    let n_train = entries.iter().filter(|e| e.split == Split::Train).count();
    let n_val = entries.len() - n_train;
    let total = entries.len().max(1) as f64;
    SplitReport {
        n_train,
        n_val,
        train: n_train as f64 / total,
        val: n_val as f64 / total,
    }
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Frame images of a directory in lexicographic order.
fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files = png_files(dir)?;
    if files.len() != FRAMES_PER_CLIP {
        return Err(Error::data(
            dir,
            format!("expected {FRAMES_PER_CLIP} frames, found {}", files.len()),
        ));
    }
    Ok(files)
}

fn load_frames(files: &[PathBuf], norm: FrameNorm) -> Result<FrameSequence> {
    let mut images = Vec::with_capacity(files.len());
    for f in files {
        let (rgb, h, w) = read_png_rgb8(f)?;
        if (h, w) != (FRAME_SIZE, FRAME_SIZE) {
            return Err(Error::data(f, format!("frame is {w}x{h}, expected {FRAME_SIZE}x{FRAME_SIZE}")));
        }
        images.push(rgb);
    }
    FrameSequence::from_rgb8(&images, FRAME_SIZE, FRAME_SIZE, norm)
}

/// Every PNG of a directory, in lexicographic order, as one sequence of
/// 224x224 frames.
pub fn read_frames_dir(dir: impl AsRef<Path>, norm: FrameNorm) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(Error::data(dir, "no PNG frames found"));
    }
    load_frames(&files, norm)
}

/// Decodes a full example: stereo audio at 44.1 kHz (resampled if needed,
/// length within one STFT hop of 10 s) and its 50 frames.
pub fn read_example(entry: &ManifestEntry, norm: FrameNorm) -> Result<(AudioClip, FrameSequence)> {
    let clip = wav::read(&entry.audio_path)?
        .to_working_rate()
        .map_err(|e| Error::data(&entry.audio_path, e.to_string()))?;
    let expected = FRAMES_PER_CLIP * SAMPLES_PER_FRAME;
    if clip.len().abs_diff(expected) > HOP {
        return Err(Error::data(
            &entry.audio_path,
            format!("expected {expected} +/- {HOP} samples at {SAMPLE_RATE} Hz, found {}", clip.len()),
        ));
    }
    let frames = load_frames(&frame_files(&entry.frames_dir)?, norm)?;
    Ok((clip, frames))
}

/// [`ExampleSource`] over manifest entries; audio windows are read with
/// seeks, frames are decoded on demand.
pub struct ManifestSource {
    entries: Vec<ManifestEntry>,
    frame_files: Vec<Vec<PathBuf>>,
}

impl ManifestSource {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let frame_files = entries
            .iter()
            .map(|e| frame_files(&e.frames_dir))
            .collect::<Result<_>>()?;
        Ok(Self { entries, frame_files })
    }

    pub fn open(manifest: impl AsRef<Path>) -> Result<Self> {
        Self::new(load_manifest(manifest)?)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    fn read_window(&self, path: &Path, start: usize, len: usize) -> Result<AudioClip> {
        let fail = |e: hound::Error| Error::data(path, format!("cannot read WAV: {e}"));
        let mut reader = WavReader::open(path).map_err(fail)?;
        let spec = reader.spec();
        if spec.sample_rate != SAMPLE_RATE || spec.channels != 2 || spec.sample_format != hound::SampleFormat::Int {
            // uncommon layouts: decode everything
            let clip = wav::read(path)?.to_working_rate()?;
            return Ok(pad_to(clip.slice(start, len), len));
        }
        let total = reader.duration() as usize;
        if start >= total {
            return Ok(pad_to(AudioClip::new(vec![], vec![], SAMPLE_RATE)?, len));
        }
        reader.seek(start as u32).map_err(|e| Error::io(path, e))?;
        let scale = 1.0 / (1u32 << (spec.bits_per_sample - 1)) as f32;
        let take = len.min(total - start) * 2;
        let samples: Vec<f32> = reader
            .samples::<i32>()
            .take(take)
            .map(|s| s.map(|v| v as f32 * scale))
            .collect::<std::result::Result<_, _>>()
            .map_err(fail)?;
        let (left, right) = samples.chunks_exact(2).map(|f| (f[0], f[1])).unzip();
        Ok(pad_to(AudioClip::new(left, right, SAMPLE_RATE)?, len))
    }
}

/// Zero-pads a clip that ends early (recordings may be a hop short).
fn pad_to(clip: AudioClip, len: usize) -> AudioClip {
    if clip.len() >= len {
        return clip;
    }
    let mut left = clip.left().to_vec();
    let mut right = clip.right().to_vec();
    left.resize(len, 0.0);
    right.resize(len, 0.0);
    AudioClip::new(left, right, clip.sample_rate()).expect("equal lengths")
}

impl ExampleSource for ManifestSource {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn id(&self, index: usize) -> String {
        self.entries[index].id.clone()
    }

    fn label(&self, index: usize) -> SceneClass {
        self.entries[index].label
    }

    fn split(&self, index: usize) -> Split {
        self.entries[index].split
    }

    fn frame_count(&self, index: usize) -> usize {
        self.frame_files[index].len()
    }

    fn audio(&self, index: usize, start: usize, count: usize) -> Result<AudioClip> {
        self.read_window(
            &self.entries[index].audio_path,
            start * SAMPLES_PER_FRAME,
            count * SAMPLES_PER_FRAME,
        )
    }

    fn frames(&self, index: usize, start: usize, count: usize, norm: FrameNorm) -> Result<FrameSequence> {
        let files = &self.frame_files[index];
        if start + count > files.len() {
            return Err(Error::data(
                &self.entries[index].frames_dir,
                format!("frames {start}..{} requested, {} available", start + count, files.len()),
            ));
        }
        load_frames(&files[start..start + count], norm)
    }
}
