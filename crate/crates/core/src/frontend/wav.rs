//! RIFF PCM reading (16/24-bit integer or 32-bit float) and 16-bit writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

pub fn read(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| Error::data(path, format!("cannot read WAV: {e}")))?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(Error::data(
            path,
            format!("expected a stereo WAV, found {} channel(s)", spec.channels),
        ));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / (1u32 << (bits - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::data(path, format!("corrupt WAV data: {e}")))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::data(path, format!("corrupt WAV data: {e}")))?,
        (format, bits) => {
            return Err(Error::data(path, format!("unsupported sample format {format:?} with {bits} bits")));
        }
    };
    let (left, right) = interleaved.chunks_exact(2).map(|f| (f[0], f[1])).unzip();
    AudioClip::new(left, right, spec.sample_rate).map_err(|e| Error::data(path, e.to_string()))
}

/// Writes 16-bit stereo PCM, clipping to `[-1, 1]`.
pub fn write(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 2,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let fail = |e: hound::Error| Error::data(path, format!("cannot write WAV: {e}"));
    let mut writer = WavWriter::create(path, spec).map_err(fail)?;
    for (&l, &r) in clip.left().iter().zip(clip.right()) {
        for s in [l, r] {
            writer.write_sample(quantize(s)).map_err(fail)?;
        }
    }
    writer.finalize().map_err(fail)
}

fn quantize(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
