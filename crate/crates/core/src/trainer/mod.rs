//! Training: subject-level data splitting, patch sampling, the drift and total losses,
//! early stopping, and the optimization loop.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::drift::DriftError;
use crate::generator::GeneratorError;
use crate::tensor::TensorError;

mod early_stop;
mod loss;
mod patches;
mod split;
mod train;

pub use early_stop::should_stop;
pub use loss::{batch_drift_loss, drift_loss, total_loss, DriftTerm, LossReport};
pub use patches::{patch_set, sample_patches, sample_windows, Patches};
pub use split::{split_dataset, Split};
pub use train::{train, EpochLog, TrainOutcome, BEST_CHECKPOINT, FINAL_CHECKPOINT, TRAIN_LOG};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("cannot split {ids} ids into {partitions} non-empty partitions")]
    TooFewIds { ids: usize, partitions: usize },
    #[error("patch size {size} does not fit in a {height}x{width} image")]
    PatchTooLarge {
        size: usize,
        height: usize,
        width: usize,
    },
    #[error("non-finite loss at epoch {epoch}, step {step}; last good checkpoint kept")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Drift(#[from] DriftError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

/// How the kernel temperature is chosen at each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum TauMode {
    /// Median query-to-positive patch distance of the current batch.
    Median,
    Fixed(f64),
}

/// Whether `patches_per_image` crops are taken from every image or from the batch as a whole.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchScope {
    PerImage,
    PerBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_drift: f64,
    pub lambda_l1: f64,
    pub patches_per_image: usize,
    pub patch_size: usize,
    pub patch_scope: PatchScope,
    pub lr: f64,
    pub tau_mode: TauMode,
    pub early_stop_window: usize,
    pub early_stop_threshold: f64,
    /// Train/validation/test fractions over subjects.
    pub split: [f64; 3],
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Noise seed for validation generations.
    pub val_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_drift: 1.0,
            lambda_l1: 10.0,
            patches_per_image: 16,
            patch_size: 16,
            patch_scope: PatchScope::PerImage,
            lr: 1e-4,
            tau_mode: TauMode::Median,
            early_stop_window: 20,
            early_stop_threshold: 0.01,
            split: [0.7, 0.1, 0.2],
            seed: 0,
            batch_size: 1,
            max_epochs: 100,
            val_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainerError::Config(m));
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions must be non-negative and sum to 1, got {:?}", self.split));
        }
        if self.split[0] == 0.0 {
            return bad("the training fraction must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda_drift >= 0.0 && self.lambda_l1 >= 0.0) || self.lambda_drift + self.lambda_l1 == 0.0 {
            return bad("loss weights must be non-negative and not both zero".into());
        }
        if self.patches_per_image == 0 || self.patch_size == 0 || self.batch_size == 0 {
            return bad("patches_per_image, patch_size and batch_size must be positive".into());
        }
        if self.early_stop_window == 0 || !(0.0..1.0).contains(&self.early_stop_threshold) {
            return bad("early_stop_window must be >= 1 and early_stop_threshold in [0, 1)".into());
        }
        if let TauMode::Fixed(t) = self.tau_mode {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("fixed tau must be positive, got {t}"));
            }
        }
        Ok(())
    }

    /// Also checks that patches fit the image size.
    pub fn validate_for_image(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if self.patch_size > height || self.patch_size > width {
            return Err(TrainerError::PatchTooLarge {
                size: self.patch_size,
                height,
                width,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_bad_values_rejected() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert!(TrainConfig { split: [0.5, 0.1, 0.2], ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { tau_mode: TauMode::Fixed(-1.0), ..c.clone() }.validate().is_err());
        assert!(matches!(
            c.validate_for_image(8, 8),
            Err(TrainerError::PatchTooLarge { size: 16, .. })
        ));
    }

    #[test]
    fn tau_mode_serializes_readably() {
        let s = toml::to_string(&TrainConfig {
            tau_mode: TauMode::Fixed(0.5),
            ..TrainConfig::default()
        })
        .unwrap();
        assert!(s.contains("[tau_mode]"));
        let back: TrainConfig = toml::from_str(&s).unwrap();
        assert_eq!(back.tau_mode, TauMode::Fixed(0.5));
    }
}
