//! Checkpoint archives.
//!
//! A checkpoint is an uncompressed tar archive holding `manifest.json` and
//! one raw little-endian array per parameter under `arrays/`. Values are
//! written bit for bit, so a save/load round trip is exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::params::{Param, ParamKind, ParamSet};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub path: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub trainable: bool,
    pub kind: ParamKind,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Free-form metadata: model configuration, training provenance.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

fn append(builder: &mut tar::Builder<impl Write>, name: &str, bytes: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    builder.append_data(&mut header, name, bytes)?;
    Ok(())
}

/// Writes `params` to `writer`.
pub fn write<T: Float>(writer: impl Write, params: &ParamSet<T>, seed: u64, metadata: serde_json::Value) -> Result<Manifest> {
    let mut builder = tar::Builder::new(writer);
    let mut entries = Vec::with_capacity(params.len());
    for (i, (path, p)) in params.iter().enumerate() {
        let file = format!("arrays/{i:05}.bin");
        let mut bytes = Vec::with_capacity(p.tensor.len() * T::BYTES);
        for &v in p.tensor.data() {
            v.write_le(&mut bytes);
        }
        append(&mut builder, &file, &bytes)?;
        entries.push(ParamEntry {
            path: path.to_string(),
            shape: p.tensor.shape().to_vec(),
            dtype: T::DTYPE.to_string(),
            trainable: p.trainable,
            kind: p.kind,
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        seed,
        params: entries,
        metadata,
    };
    append(&mut builder, MANIFEST, &serde_json::to_vec_pretty(&manifest)?)?;
    builder.into_inner()?.flush()?;
    Ok(manifest)
}

pub fn save<T: Float>(path: impl AsRef<Path>, params: &ParamSet<T>, seed: u64, metadata: serde_json::Value) -> Result<Manifest> {
    let file = std::fs::File::create(path)?;
    write(std::io::BufWriter::new(file), params, seed, metadata)
}

fn decode<T: Float, S: Float>(bytes: &[u8], len: usize) -> Vec<T> {
    bytes
        .chunks_exact(S::BYTES)
        .take(len)
        .map(|c| T::from_f64c(S::read_le(c).to_f64c()))
        .collect()
}

/// Reads a checkpoint. Arrays stored in another precision are converted
/// to `T`; same-precision loads are bit exact.
pub fn read<T: Float>(reader: impl Read) -> Result<(ParamSet<T>, Manifest)> {
    let mut archive = tar::Archive::new(reader);
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for entry in archive.entries()? {
        let mut entry = entry?;
        let name = entry.path()?.to_string_lossy().into_owned();
        let mut bytes = Vec::new();
        entry.read_to_end(&mut bytes)?;
        files.insert(name, bytes);
    }
    let manifest: Manifest = serde_json::from_slice(
        files
            .get(MANIFEST)
            .ok_or_else(|| Error::Checkpoint("archive has no manifest.json".into()))?,
    )?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut params = ParamSet::new();
    for e in &manifest.params {
        let bytes = files
            .get(&e.file)
            .ok_or_else(|| Error::Checkpoint(format!("missing array file {} for `{}`", e.file, e.path)))?;
        let len: usize = e.shape.iter().product();
        let width = match e.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Checkpoint(format!("unsupported dtype `{other}` for `{}`", e.path))),
        };
        if bytes.len() != len * width {
            return Err(Error::Checkpoint(format!(
                "`{}`: {} bytes for shape {:?} of {}",
                e.path,
                bytes.len(),
                e.shape,
                e.dtype
            )));
        }
        let data = if e.dtype == T::DTYPE {
            bytes.chunks_exact(T::BYTES).map(T::read_le).collect()
        } else if width == 4 {
            decode::<T, f32>(bytes, len)
        } else {
            decode::<T, f64>(bytes, len)
        };
        params.insert_param(
            e.path.clone(),
            Param {
                tensor: Tensor::new(&e.shape, data)?,
                trainable: e.trainable && e.kind == ParamKind::Weight,
                kind: e.kind,
            },
        )?;
    }
    Ok((params, manifest))
}

pub fn load<T: Float>(path: impl AsRef<Path>) -> Result<(ParamSet<T>, Manifest)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ps = ParamSet::<f32>::new();
        ps.insert("a/kernel", Tensor::new(&[2, 2], vec![0.1, -0.0, f32::MIN_POSITIVE, 3e38]).unwrap(), true)
            .unwrap();
        ps.insert("a/bias", Tensor::zeros(&[2]), false).unwrap();
        ps.insert_statistic("a/moving_mean", Tensor::full(&[2], 1.0 / 3.0)).unwrap();
        let mut buf = Vec::new();
        write(&mut buf, &ps, 42, serde_json::json!({"model": "test"})).unwrap();
        let (back, manifest) = read::<f32>(buf.as_slice()).unwrap();
        assert_eq!(manifest.seed, 42);
        assert_eq!(manifest.metadata["model"], "test");
        for ((ka, pa), (kb, pb)) in ps.iter().zip(back.iter()) {
            assert_eq!(ka, kb);
            assert_eq!(pa.trainable, pb.trainable);
            assert_eq!(pa.kind, pb.kind);
            let bits_a: Vec<u32> = pa.tensor.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = pb.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn truncated_array_is_rejected() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("w", Tensor::zeros(&[4]), true).unwrap();
        let mut buf = Vec::new();
        let mut manifest = write(&mut buf, &ps, 0, serde_json::Value::Null).unwrap();
        manifest.params[0].shape = vec![5];
        let mut forged = Vec::new();
        {
            let mut b = tar::Builder::new(&mut forged);
            append(&mut b, "arrays/00000.bin", &[0u8; 32]).unwrap();
            append(&mut b, MANIFEST, &serde_json::to_vec(&manifest).unwrap()).unwrap();
            b.finish().unwrap();
        }
        assert!(matches!(read::<f64>(forged.as_slice()), Err(Error::Checkpoint(_))));
    }
}
