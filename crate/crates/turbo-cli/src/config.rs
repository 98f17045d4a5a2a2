//! The on-disk run configuration: one JSON document mirroring the library
//! config types, parsed strictly so typos fail loudly instead of being
//! silently defaulted.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use turbo_core::{ModelConfig, TurboConfig};

use crate::{Failure, EXIT_CONFIG};

fn default_repetitions() -> usize {
    5
}

/// Top-level config file schema. `model` is required; everything else has
/// defaults, so the smallest useful file is `{"model": {}}`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub turbo: TurboConfig,
    /// Timed repetitions per measured pass (minimum 3).
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Optional input activation dump; synthesized from the seed when absent.
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Optional context activation dump (generation mode only).
    #[serde(default)]
    pub context: Option<PathBuf>,
}

impl RunConfig {
    /// Loads and strictly parses a config file. Any I/O or schema problem
    /// is a config error (exit 2).
    pub fn load(path: &Path) -> Result<RunConfig, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("cannot read config {}: {e}", path.display()),
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("invalid config {}: {e}", path.display()),
        })?;
        cfg.model.validate().map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("invalid model config: {e}"),
        })?;
        cfg.turbo.validate().map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("invalid turbo config: {e}"),
        })?;
        Ok(cfg)
    }
}
