//! The single experiment configuration document. Every subcommand
//! accepts `--config <json>`; command-line flags override file values.

use crate::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use siformer::infer::EarlyExitConfig;
use siformer::model::SiformerConfig;
use siformer::rectify::RectifyConfig;
use siformer::sampling::{AugmentConfig, SmoteConfig};
use siformer::train::TrainConfig;
use std::path::Path;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: SiformerConfig,
    pub train: TrainConfig,
    pub rectify: RectifyConfig,
    pub smote: SmoteConfig,
    pub augment: AugmentConfig,
    pub exit: EarlyExitConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("invalid config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.rectify.validate()?;
        self.smote.validate()?;
        self.augment.validate()?;
        self.exit.validate()?;
        Ok(())
    }
}

/// Parses `--patience` values: a positive integer or `off`.
pub fn parse_patience(value: &str) -> CliResult<Option<usize>> {
    if value.eq_ignore_ascii_case("off") {
        return Ok(None);
    }
    let n: usize = value
        .parse()
        .map_err(|_| CliError::validation(format!("patience must be a positive integer or 'off', got '{value}'")))?;
    if n == 0 {
        return Err(CliError::validation("patience must be at least 1 (or 'off')"));
    }
    Ok(Some(n))
}
