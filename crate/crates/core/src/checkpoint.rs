//! Checkpoint files: a one-line JSON header describing the model spec,
//! seed, epoch, and parameter layout, then a raw little-endian float64
//! blob holding every parameter tensor in declaration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ModelSpec,
    seed: u64,
    epoch: usize,
    params: Vec<ParamMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(model: &Model, epoch: usize, path: &Path) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        spec: model.spec.clone(),
        seed: model.spec.seed,
        epoch,
        params: model
            .params
            .iter()
            .map(|p| ParamMeta {
                name: p.name.clone(),
                shape: p.value.shape.clone(),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&header).map_err(|e| Error::Malformed {
        path: path.display().to_string(),
        detail: format!("header serialization failed: {e}"),
    })?;
    bytes.push(b'\n');
    for p in &model.params {
        for v in &p.value.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Loads a checkpoint, returning the model and the epoch it was saved
/// at. The parameter list in the header must match what the embedded
/// spec builds, so a checkpoint can never silently reshape a model.
pub fn load_checkpoint(path: &Path) -> Result<(Model, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        Error::Malformed {
            path: path.display().to_string(),
            detail: "no header line (missing newline)".into(),
        }
    })?;
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            detail: format!("header is not valid JSON: {e}"),
        })?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.display().to_string(),
            expected: CHECKPOINT_VERSION,
            found: header.format_version,
        });
    }

    let mut model = Model::build(header.spec)?;
    if header.params.len() != model.params.len()
        || header
            .params
            .iter()
            .zip(&model.params)
            .any(|(h, p)| h.name != p.name || h.shape != p.value.shape)
    {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            detail: "parameter list does not match the spec in the header".into(),
        });
    }

    let blob = &bytes[newline + 1..];
    let expected: usize = model.params.iter().map(|p| p.value.numel() * 8).sum();
    if blob.len() < expected {
        return Err(Error::TruncatedBlob {
            path: path.display().to_string(),
            expected_bytes: expected as u64,
            actual_bytes: blob.len() as u64,
        });
    }
    if blob.len() > expected {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            detail: format!("{} trailing bytes after parameter blob", blob.len() - expected),
        });
    }
    let mut offset = 0;
    for p in &mut model.params {
        for v in &mut p.value.data {
            *v = f64::from_le_bytes(blob[offset..offset + 8].try_into().unwrap());
            offset += 8;
        }
        if !p.value.is_all_finite() {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                detail: format!("non-finite value in parameter {}", p.name),
            });
        }
    }
    Ok((model, header.epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn tiny_model() -> Model {
        Model::build(ModelSpec::tiny(Variant::OpBilinear)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny_model();
        save_checkpoint(&model, 5, &path).unwrap();
        let (loaded, epoch) = load_checkpoint(&path).unwrap();
        assert_eq!(epoch, 5);
        assert_eq!(loaded.spec, model.spec);
        for (a, b) in model.params.iter().zip(&loaded.params) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn truncated_blob_reports_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), 0, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::TruncatedBlob {
                expected_bytes,
                actual_bytes,
                ..
            } => assert_eq!(expected_bytes, actual_bytes + 16),
            other => panic!("expected TruncatedBlob, got {other}"),
        }
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), 0, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let newline = bytes.iter().position(|&b| b == b'\n').unwrap();
        let text = std::str::from_utf8(&bytes[..newline]).unwrap();
        let patched = text.replace("\"format_version\":1", "\"format_version\":9");
        let mut out = patched.into_bytes();
        out.extend_from_slice(&bytes[newline..]);
        fs::write(&path, out).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::VersionMismatch { expected, found, .. } => {
                assert_eq!(expected, 1);
                assert_eq!(found, 9);
            }
            other => panic!("expected VersionMismatch, got {other}"),
        }
    }

    #[test]
    fn garbage_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        fs::write(&path, b"not json\n\x00\x00").unwrap();
        assert!(matches!(
            load_checkpoint(&path).unwrap_err(),
            Error::Malformed { .. }
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(), 0, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::Malformed { detail, .. } => assert!(detail.contains("trailing"), "{detail}"),
            other => panic!("expected Malformed, got {other}"),
        }
    }
}
