use std::path::{Path, PathBuf};

use anyhow::Context;
use decenergy::evaluation::Stratify;
use decenergy::ModelKind;
use serde::Deserialize;

/// Defaults shared by subcommands, read from `--config <file>.toml`.
/// Command-line flags take precedence over these values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub allow_negative: Option<bool>,
    pub stratify: Option<Stratify>,
    pub data: Option<PathBuf>,
    pub coeffs: Option<PathBuf>,
    #[serde(default)]
    pub measure: MeasureConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub m_min: Option<usize>,
    pub m_max: Option<usize>,
    pub source: Option<String>,
    pub cmd: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}
