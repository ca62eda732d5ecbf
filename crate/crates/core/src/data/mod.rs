//! Volume I/O, preprocessing, paired datasets, and procedural phantoms.

use std::path::PathBuf;

use thiserror::Error;

pub mod dataset;
pub mod phantom;
pub mod preprocess;
pub mod volume;

pub use dataset::{discover_pairs, load_pair, PairPaths, PairedSample, SliceDataset};
pub use phantom::{generate_phantom_pair, PhantomSpec};
pub use preprocess::{crop_or_pad, normalize, preprocess, resample_isotropic, PreprocessConfig};
pub use volume::{read_volume, write_pgm, write_volume, Modality, Normalization, Volume};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("shape {shape:?} needs {} values, got {values}", shape.iter().product::<usize>())]
    ShapeMismatch { shape: [usize; 3], values: usize },
    #[error("volume contains non-finite values")]
    NonFinite,
    #[error("{}: not a volume header (bad magic)", .0.display())]
    BadMagic(PathBuf),
    #[error("{}: {msg}", path.display())]
    Header { path: PathBuf, msg: String },
    #[error("{}: unsupported volume format version {found}", path.display())]
    UnsupportedVersion { path: PathBuf, found: u32 },
    #[error("{}: expected {expected} bytes, found {actual}", path.display())]
    ByteCount {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("subject `{subject}`: missing {missing}")]
    MissingPair { subject: String, missing: String },
    #[error("subject `{subject}`: condition {condition:?} and target {target:?} differ in shape")]
    PairShape {
        subject: String,
        condition: [usize; 3],
        target: [usize; 3],
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, DataError>;
