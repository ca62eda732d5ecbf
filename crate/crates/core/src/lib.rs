//! One-step conditional image synthesis with a kernel drift-field training objective.
//!
//! The crate is organised by capability:
//!
//! - [`tensor`]: dense arrays, a reverse-mode tape, Adam, finite-difference checks
//! - [`drift`]: the kernel drift field over sets of flattened samples
//! - [`generator`]: a small conditional UNet and its checkpoint format
//! - [`trainer`]: patch sampling, the drift and total losses, the training loop
//! - [`data`]: volume files, preprocessing, paired phantoms
//! - [`metrics`]: SSIM/PSNR/RMSE, uncertainty maps, inference timing
//! - [`toy`]: a 1-D conditional transport problem
//! - [`config`] and [`pipeline`]: the run config and the operations behind the CLI

pub mod config;
pub mod data;
pub mod drift;
pub mod generator;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod toy;
pub mod trainer;
