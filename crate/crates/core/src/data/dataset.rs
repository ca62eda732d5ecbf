//! Paired condition/target volumes on disk and the 2-D slice dataset used for training.
//!
//! A directory of pairs holds `<subject>_cond.{vhdr,vraw}` and `<subject>_target.{vhdr,vraw}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::preprocess::{foreground_slices, PreprocessConfig};
use super::volume::{read_volume, Modality, Volume};
use super::{DataError, Result};
use crate::tensor::Tensor;

pub const CONDITION_SUFFIX: &str = "_cond";
pub const TARGET_SUFFIX: &str = "_target";
pub const PREDICTION_SUFFIX: &str = "_pred";

/// A condition volume `m` with its target `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub subject: String,
    pub m: Volume,
    pub c: Volume,
}

impl PairedSample {
    pub fn new(subject: impl Into<String>, m: Volume, c: Volume) -> Result<Self> {
        let subject = subject.into();
        if m.modality() != Modality::Condition || c.modality() != Modality::Target {
            return Err(DataError::Config(format!(
                "subject `{subject}`: expected condition/target modalities, got {}/{}",
                m.modality(),
                c.modality()
            )));
        }
        Ok(Self { subject, m, c })
    }

    /// Requires identical shape and spacing, as holds after preprocessing.
    pub fn check_aligned(&self) -> Result<()> {
        if self.m.shape() != self.c.shape() || self.m.spacing() != self.c.spacing() {
            return Err(DataError::PairShape {
                subject: self.subject.clone(),
                condition: self.m.shape(),
                target: self.c.shape(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairPaths {
    pub subject: String,
    pub condition: PathBuf,
    pub target: PathBuf,
}

pub fn condition_stem(dir: &Path, subject: &str) -> PathBuf {
    dir.join(format!("{subject}{CONDITION_SUFFIX}"))
}

pub fn target_stem(dir: &Path, subject: &str) -> PathBuf {
    dir.join(format!("{subject}{TARGET_SUFFIX}"))
}

pub fn prediction_stem(dir: &Path, subject: &str) -> PathBuf {
    dir.join(format!("{subject}{PREDICTION_SUFFIX}"))
}

/// Header stems in `dir` ending in `suffix`, keyed by subject.
pub fn stems_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let io = |source| DataError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("vhdr") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if let Some(subject) = stem.strip_suffix(suffix) {
            out.insert(subject.to_string(), path.with_extension(""));
        }
    }
    Ok(out)
}

/// Finds every subject in `dir`, sorted by name. A subject with only one member of its pair
/// is an error naming that subject.
pub fn discover_pairs(dir: &Path) -> Result<Vec<PairPaths>> {
    let conds = stems_with_suffix(dir, CONDITION_SUFFIX)?;
    let mut targets = stems_with_suffix(dir, TARGET_SUFFIX)?;
    let mut out = Vec::with_capacity(conds.len());
    for (subject, condition) in conds {
        let Some(target) = targets.remove(&subject) else {
            return Err(DataError::MissingPair {
                missing: format!("{subject}{TARGET_SUFFIX}.vhdr"),
                subject,
            });
        };
        out.push(PairPaths {
            subject,
            condition,
            target,
        });
    }
    if let Some((subject, _)) = targets.into_iter().next() {
        return Err(DataError::MissingPair {
            missing: format!("{subject}{CONDITION_SUFFIX}.vhdr"),
            subject,
        });
    }
    Ok(out)
}

pub fn load_pair(p: &PairPaths) -> Result<PairedSample> {
    PairedSample::new(p.subject.clone(), read_volume(&p.condition)?, read_volume(&p.target)?)
}

/// One axial slice of a preprocessed pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SlicePair {
    pub subject: String,
    pub z: usize,
    pub m: Vec<f64>,
    pub c: Vec<f64>,
}

/// All training slices of a set of preprocessed pairs, with a common in-plane size.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SliceDataset {
    height: usize,
    width: usize,
    slices: Vec<SlicePair>,
}

impl SliceDataset {
    /// Keeps the slices with enough foreground. With `foreground_only = false`, every slice is
    /// kept (used for evaluation).
    pub fn from_pairs(pairs: &[PairedSample], cfg: &PreprocessConfig, foreground_only: bool) -> Result<Self> {
        let mut ds = SliceDataset::default();
        for p in pairs {
            p.check_aligned()?;
            let [nz, ny, nx] = p.c.shape();
            if ds.slices.is_empty() && ds.height == 0 {
                (ds.height, ds.width) = (ny, nx);
            } else if (ny, nx) != (ds.height, ds.width) {
                return Err(DataError::PairShape {
                    subject: p.subject.clone(),
                    condition: p.m.shape(),
                    target: [nz, ds.height, ds.width],
                });
            }
            let keep = if foreground_only {
                foreground_slices(&p.c, cfg)
            } else {
                (0..nz).collect()
            };
            for z in keep {
                ds.slices.push(SlicePair {
                    subject: p.subject.clone(),
                    z,
                    m: p.m.slice(z).to_vec(),
                    c: p.c.slice(z).to_vec(),
                });
            }
        }
        Ok(ds)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slices(&self) -> &[SlicePair] {
        &self.slices
    }

    /// Stacks the given slice indices into `[B, 1, H, W]` condition and target tensors.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let hw = self.height * self.width;
        let mut m = Vec::with_capacity(indices.len() * hw);
        let mut c = Vec::with_capacity(indices.len() * hw);
        for &i in indices {
            m.extend_from_slice(&self.slices[i].m);
            c.extend_from_slice(&self.slices[i].c);
        }
        let shape = vec![indices.len(), 1, self.height, self.width];
        (
            Tensor::new(shape.clone(), m).expect("batch shape"),
            Tensor::new(shape, c).expect("batch shape"),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::{generate_phantom_pair, PhantomSpec};
    use crate::data::volume::write_volume;

    #[test]
    fn discovery_finds_pairs_and_names_missing_subject() {
        let dir = tempfile::tempdir().unwrap();
        for (i, s) in ["b", "a"].iter().enumerate() {
            let p = generate_phantom_pair(&PhantomSpec::default().for_subject(i), *s).unwrap();
            write_volume(&condition_stem(dir.path(), s), &p.m).unwrap();
            write_volume(&target_stem(dir.path(), s), &p.c).unwrap();
        }
        let pairs = discover_pairs(dir.path()).unwrap();
        assert_eq!(pairs.iter().map(|p| p.subject.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        let loaded = load_pair(&pairs[1]).unwrap();
        assert_eq!(loaded, generate_phantom_pair(&PhantomSpec::default(), "b").unwrap());

        fs::remove_file(dir.path().join("a_target.vhdr")).unwrap();
        match discover_pairs(dir.path()).unwrap_err() {
            DataError::MissingPair { subject, .. } => assert_eq!(subject, "a"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn slice_dataset_batches_in_order() {
        let spec = PhantomSpec { slices: 2, size: [8, 8], ..PhantomSpec::default() };
        let p = generate_phantom_pair(&spec, "s").unwrap();
        let ds = SliceDataset::from_pairs(std::slice::from_ref(&p), &PreprocessConfig::default(), false).unwrap();
        assert_eq!(ds.len(), 2);
        let (m, c) = ds.batch(&[1, 0]);
        assert_eq!(m.shape(), &[2, 1, 8, 8]);
        assert_eq!(&m.data()[..64], p.m.slice(1));
        assert_eq!(&c.data()[64..], p.c.slice(0));
    }
}
