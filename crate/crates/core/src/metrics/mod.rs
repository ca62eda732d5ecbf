//! Image quality metrics, repeated-sampling uncertainty maps, inference timing, and the
//! per-slice metrics report.

use thiserror::Error;

use crate::generator::GeneratorError;

mod quality;
pub mod report;
mod timing;
mod uncertainty;

pub use quality::{mean_gradient_magnitude, psnr, rmse, ssim, PsnrValue, SsimConfig, PSNR_CAP_DB};
pub use report::{MetricsReport, SliceMetrics, Summary};
pub use timing::{time_inference, TimingRecord};
pub use uncertainty::{std_map_from_samples, uncertainty_map, UncertaintyMap, DEFAULT_SAMPLES};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("image {height}x{width} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("one-step contract violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Dimensions of an image given as a flat row-major buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
}

impl ImageDims {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
