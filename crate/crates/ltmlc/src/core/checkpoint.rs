//! Bit-exact checkpoint container.
//!
//! Layout: 7-byte magic `LTMLC1\n`, an 8-byte little-endian manifest length,
//! a UTF-8 JSON manifest (named tensor descriptors, run config, vocabulary),
//! then the raw payload of little-endian IEEE-754 32-bit floats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ClassVocabulary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 7] = b"LTMLC1\n";

/// A named f32 tensor with a row-major shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(NamedTensor {
            name: name.into(),
            shape,
            data,
        })
    }
}

/// Serialized model state: tensors plus the full run config and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub tensors: Vec<NamedTensor>,
    pub config: serde_json::Value,
    pub vocabulary: ClassVocabulary,
}

impl ModelCheckpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorDescriptor>,
    config: serde_json::Value,
    vocabulary: ClassVocabulary,
}

#[derive(Serialize, Deserialize)]
struct TensorDescriptor {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len_bytes: u64,
}

pub fn write_checkpoint(checkpoint: &ModelCheckpoint, path: &Path) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for t in &checkpoint.tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::Validation(format!(
                "tensor '{}' named more than once",
                t.name
            )));
        }
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "tensor '{}' contains non-finite values",
                t.name
            )));
        }
    }

    let mut descriptors = Vec::with_capacity(checkpoint.tensors.len());
    let mut payload: Vec<u8> = Vec::new();
    for t in &checkpoint.tensors {
        let offset = payload.len() as u64;
        for &v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        descriptors.push(TensorDescriptor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset,
            len_bytes: payload.len() as u64 - offset,
        });
    }

    let manifest = Manifest {
        tensors: descriptors,
        config: checkpoint.config.clone(),
        vocabulary: checkpoint.vocabulary.clone(),
    };
    let manifest_json =
        serde_json::to_vec(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;

    let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest_json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    out.extend_from_slice(&payload);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

fn parse_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Truncated(format!(
            "file is {} bytes, header needs {}",
            bytes.len(),
            MAGIC.len() + 8
        )));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 8]);
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;

    let manifest_start = MAGIC.len() + 8;
    let payload_start = manifest_start
        .checked_add(manifest_len)
        .ok_or_else(|| Error::Truncated("manifest length overflows".into()))?;
    if payload_start > bytes.len() {
        return Err(Error::Truncated(format!(
            "manifest declares {manifest_len} bytes, only {} available",
            bytes.len() - manifest_start
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[manifest_start..payload_start])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    let payload = &bytes[payload_start..];

    let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.tensors.len());
    let mut seen = std::collections::HashSet::new();
    for d in &manifest.tensors {
        if !seen.insert(d.name.as_str()) {
            return Err(Error::Manifest(format!(
                "tensor '{}' named more than once",
                d.name
            )));
        }
        if d.dtype != "f32" {
            return Err(Error::Manifest(format!(
                "tensor '{}' has unsupported dtype '{}'",
                d.name, d.dtype
            )));
        }
        let numel: usize = d.shape.iter().product();
        if d.len_bytes != (numel * 4) as u64 {
            return Err(Error::Manifest(format!(
                "tensor '{}' length {} bytes does not match shape {:?}",
                d.name, d.len_bytes, d.shape
            )));
        }
        let end = d.offset.checked_add(d.len_bytes).ok_or_else(|| {
            Error::PayloadOverflow(format!("tensor '{}' offset overflows", d.name))
        })?;
        if end > payload.len() as u64 {
            return Err(Error::PayloadOverflow(format!(
                "tensor '{}' needs bytes [{}, {}), payload has {}",
                d.name,
                d.offset,
                end,
                payload.len()
            )));
        }
        spans.push((d.offset, end, &d.name));
    }
    spans.sort_unstable();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::Manifest(format!(
                "tensors '{}' and '{}' overlap in the payload",
                pair[0].2, pair[1].2
            )));
        }
    }

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for d in &manifest.tensors {
        let start = d.offset as usize;
        let end = (d.offset + d.len_bytes) as usize;
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(NamedTensor {
            name: d.name.clone(),
            shape: d.shape.clone(),
            data,
        });
    }

    Ok(ModelCheckpoint {
        tensors,
        config: manifest.config,
        vocabulary: manifest.vocabulary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::build_vocabulary;

    fn sample() -> ModelCheckpoint {
        ModelCheckpoint {
            tensors: vec![
                NamedTensor::new("w", vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 1e-8, -7.75]).unwrap(),
                NamedTensor::new("b", vec![3], vec![0.5, 0.25, 0.125]).unwrap(),
            ],
            config: serde_json::json!({"epochs": 5}),
            vocabulary: build_vocabulary(["a", "b", "c"]).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.ltmlc");
        let ckpt = sample();
        write_checkpoint(&ckpt, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
        // Second write is byte-identical.
        let bytes1 = std::fs::read(&path).unwrap();
        write_checkpoint(&back, &path).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn corrupted_magic_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.ltmlc");
        write_checkpoint(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::BadMagic)));
    }

    #[test]
    fn truncated_file_is_distinct_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.ltmlc");
        write_checkpoint(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..10]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn payload_overflow_is_distinct_error() {
        // Manifest declares 12 bytes for a 3-element tensor, payload holds 8.
        let manifest = serde_json::json!({
            "tensors": [{"name": "w", "shape": [3], "dtype": "f32", "offset": 0, "len_bytes": 12}],
            "config": {},
            "vocabulary": ["a"],
        });
        let manifest_bytes = serde_json::to_vec(&manifest).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"LTMLC1\n");
        bytes.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&manifest_bytes);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            super::parse_checkpoint(&bytes),
            Err(Error::PayloadOverflow(_))
        ));
    }

    #[test]
    fn overlapping_tensors_rejected() {
        let manifest = serde_json::json!({
            "tensors": [
                {"name": "w", "shape": [2], "dtype": "f32", "offset": 0, "len_bytes": 8},
                {"name": "v", "shape": [2], "dtype": "f32", "offset": 4, "len_bytes": 8},
            ],
            "config": {},
            "vocabulary": ["a"],
        });
        let manifest_bytes = serde_json::to_vec(&manifest).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"LTMLC1\n");
        bytes.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&manifest_bytes);
        bytes.extend_from_slice(&[0u8; 12]);
        assert!(matches!(
            super::parse_checkpoint(&bytes),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn non_finite_tensor_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.ltmlc");
        let ckpt = ModelCheckpoint {
            tensors: vec![NamedTensor::new("w", vec![1], vec![f32::NAN]).unwrap()],
            config: serde_json::json!({}),
            vocabulary: build_vocabulary(["a"]).unwrap(),
        };
        assert!(write_checkpoint(&ckpt, &path).is_err());
    }

    proptest::proptest! {
        /// Read after write is the identity on random small tensor sets.
        #[test]
        fn round_trip_identity_on_random_models(
            tensor_sizes in proptest::collection::vec(1usize..20, 1..6),
            values in proptest::collection::vec(-1e6f32..1e6, 1..40),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("ckpt.ltmlc");
            let mut cursor = 0usize;
            let tensors: Vec<NamedTensor> = tensor_sizes
                .iter()
                .enumerate()
                .map(|(i, &len)| {
                    let data: Vec<f32> = (0..len)
                        .map(|j| values[(cursor + j) % values.len()])
                        .collect();
                    cursor += len;
                    NamedTensor::new(format!("t{i}"), vec![len], data).unwrap()
                })
                .collect();
            let ckpt = ModelCheckpoint {
                tensors,
                config: serde_json::json!({"n": tensor_sizes.len()}),
                vocabulary: build_vocabulary(["a"]).unwrap(),
            };
            write_checkpoint(&ckpt, &path).unwrap();
            let back = read_checkpoint(&path).unwrap();
            proptest::prop_assert_eq!(ckpt, back);
        }
    }
}
