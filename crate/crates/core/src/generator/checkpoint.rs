//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"DRIFTCKP"
//! 8       4     format version (u32) = 1
//! 12      8     manifest length in bytes (u64)
//! 20      M     manifest, UTF-8 JSON: {"spec": {...}, "seed": u64,
//!               "params": [{"name": str, "shape": [usize...]}, ...]}
//! 20+M    8*N   parameter values as f64, concatenated in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeneratorError, GeneratorParams, GeneratorSpec, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRIFTCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: GeneratorSpec,
    pub seed: u64,
    pub params: GeneratorParams,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    spec: GeneratorSpec,
    seed: u64,
    params: Vec<ParamEntry>,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let manifest = Manifest {
        spec: ckpt.spec.clone(),
        seed: ckpt.seed,
        params: ckpt
            .params
            .names()
            .iter()
            .zip(ckpt.params.tensors())
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + 8 * ckpt.params.count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in ckpt.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes a checkpoint. With `expected`, every parameter shape must match that spec's
/// layout; the first mismatch is reported by name.
pub fn decode(bytes: &[u8], expected: Option<&GeneratorSpec>) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(GeneratorError::NotACheckpoint);
    }
    if bytes.len() < HEADER_LEN {
        return Err(GeneratorError::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(GeneratorError::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let manifest_end = HEADER_LEN.checked_add(mlen).ok_or_else(|| {
        GeneratorError::Manifest("manifest length overflows".into())
    })?;
    if bytes.len() < manifest_end {
        return Err(GeneratorError::Truncated {
            expected: manifest_end,
            actual: bytes.len(),
        });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
        .map_err(|e| GeneratorError::Manifest(e.to_string()))?;

    let spec = match expected {
        Some(spec) => {
            let layout = spec.layout();
            for (i, (name, shape)) in layout.iter().enumerate() {
                let Some(entry) = manifest.params.get(i) else {
                    return Err(GeneratorError::ShapeMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: vec![],
                    });
                };
                if &entry.shape != shape || &entry.name != name {
                    return Err(GeneratorError::ShapeMismatch {
                        name: name.clone(),
                        expected: shape.clone(),
                        found: entry.shape.clone(),
                    });
                }
            }
            if manifest.params.len() != layout.len() {
                return Err(GeneratorError::ParamCount {
                    expected: layout.len(),
                    found: manifest.params.len(),
                });
            }
            spec.clone()
        }
        None => manifest.spec.clone(),
    };

    let total: usize = manifest
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum();
    let expected_len = manifest_end + 8 * total;
    if bytes.len() != expected_len {
        return Err(GeneratorError::Truncated {
            expected: expected_len,
            actual: bytes.len(),
        });
    }
    let mut values = bytes[manifest_end..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for p in &manifest.params {
        let n = p.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        tensors.push(Tensor::new(p.shape.clone(), data)?);
    }
    let params = GeneratorParams::from_parts(&spec, tensors)?;
    if params.names().iter().zip(&manifest.params).any(|(a, b)| *a != b.name) {
        return Err(GeneratorError::Manifest("parameter names do not match the spec layout".into()));
    }
    Ok(Checkpoint {
        spec,
        seed: manifest.seed,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: Option<&GeneratorSpec>) -> Result<Checkpoint> {
    decode(&fs::read(path)?, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let spec = GeneratorSpec {
            base_width: 2,
            depth: 1,
            ..GeneratorSpec::default()
        };
        let params = GeneratorParams::init(&spec, 42).unwrap();
        Checkpoint { spec, seed: 42, params }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = ckpt();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        save_checkpoint(&path, &c).unwrap();
        let back = load_checkpoint(&path, None).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.spec, c.spec);
        for (a, b) in back.params.tensors().iter().zip(c.params.tensors()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn wrong_spec_names_first_mismatched_shape() {
        let bytes = encode(&ckpt());
        let other = GeneratorSpec {
            base_width: 3,
            depth: 1,
            ..GeneratorSpec::default()
        };
        match decode(&bytes, Some(&other)).unwrap_err() {
            GeneratorError::ShapeMismatch { name, expected, found } => {
                assert_eq!(name, "enc0.conv_a.weight");
                assert_eq!(expected, vec![3, 2, 3, 3]);
                assert_eq!(found, vec![2, 2, 3, 3]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn corrupt_magic_is_not_a_checkpoint() {
        let mut bytes = encode(&ckpt());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes, None), Err(GeneratorError::NotACheckpoint)));
    }

    #[test]
    fn version_and_truncation_have_distinct_errors() {
        let bytes = encode(&ckpt());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            decode(&v2, None),
            Err(GeneratorError::UnsupportedVersion { found: 2, .. })
        ));
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            decode(cut, None),
            Err(GeneratorError::Truncated { .. })
        ));
    }
}
