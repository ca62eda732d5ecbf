//! The run configuration: one TOML file covering phantoms, preprocessing, the generator,
//! training and metrics.
//!
//! Every section is optional and defaults as documented on its type; unknown keys anywhere
//! are rejected. The file must start with the format version:
//!
//! ```toml
//! version = 1
//!
//! [phantom]
//! size = [64, 64]
//!
//! [train]
//! max_epochs = 50
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PhantomSpec, PreprocessConfig};
use crate::generator::GeneratorSpec;
use crate::metrics::{SsimConfig, DEFAULT_SAMPLES};
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;
/// File name of the fully resolved config written into every output directory.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{}: unsupported config version {found} (expected {CONFIG_VERSION})", path.display())]
    Version { path: PathBuf, found: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ssim: SsimConfig,
    /// Repeated generations per uncertainty map.
    pub uncertainty_samples: usize,
    /// Untimed generations before `bench` starts measuring.
    pub bench_warmup: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ssim: SsimConfig::default(),
            uncertainty_samples: DEFAULT_SAMPLES,
            bench_warmup: 3,
        }
    }
}

/// Default locations used when the matching command-line flag is absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            phantom: PhantomSpec::default(),
            preprocess: PreprocessConfig::default(),
            generator: GeneratorSpec::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            msg: e.to_string(),
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version {
                path: origin.to_path_buf(),
                found: cfg.version,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// Loads `path`, or returns the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.generator.validate().map_err(|e| invalid(&e))?;
        self.phantom
            .validate(self.generator.size_multiple())
            .map_err(|e| invalid(&e))?;
        self.preprocess.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.metrics.ssim.validate().map_err(|e| invalid(&e))?;
        if self.metrics.uncertainty_samples == 0 {
            return Err(ConfigError::Invalid("metrics.uncertainty_samples must be at least 1".into()));
        }
        Ok(())
    }

    /// The config with every default spelled out.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string_pretty(self).expect("config serializes");
        format!("# Fully resolved run configuration.\n{body}")
    }

    /// Writes [`RESOLVED_CONFIG`] into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
