//! Run configuration: a TOML file with the same shape as the CLI flags.
//! Flags override file values; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::oracle::{PromptMode, DEFAULT_CONTEXT_CAP, DEFAULT_SUFFIX};
use crate::retrieval::{Bm25Params, FieldPolicy, DEFAULT_TOP_K};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub retriever: RetrieverConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub baseline_run: Option<PathBuf>,
    pub mock_table: Option<PathBuf>,
    pub ledger: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverConfig {
    pub k: usize,
    pub k1: f64,
    pub b: f64,
    pub field_policy: FieldPolicy,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        RetrieverConfig {
            k: DEFAULT_TOP_K,
            k1: Bm25Params::default().k1,
            b: Bm25Params::default().b,
            field_policy: FieldPolicy::default(),
        }
    }
}

impl RetrieverConfig {
    pub fn params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.k1,
            b: self.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Constant,
    Http,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    /// Probability returned by the constant backend.
    pub constant: f64,
    pub mode: PromptMode,
    pub retries: u32,
    pub timeout_ms: u64,
    pub concurrency: usize,
    pub context_cap: usize,
    pub suffix: String,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            backend: BackendKind::Mock,
            endpoint: None,
            constant: 0.5,
            mode: PromptMode::ParametricPlus,
            retries: 2,
            timeout_ms: 30_000,
            concurrency: 1,
            context_cap: DEFAULT_CONTEXT_CAP,
            suffix: DEFAULT_SUFFIX.to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub seed: u64,
    pub entities: usize,
    pub queries_per_template: usize,
    pub noise: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = crate::synth::SynthConfig::default();
        SynthSection {
            seed: d.seed,
            entities: d.entities,
            queries_per_template: d.queries_per_template,
            noise: d.noise,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.retriever.k < 1 {
            return Err(ConfigError::Invalid("retriever.k must be >= 1".into()));
        }
        if self.retriever.k1 < 0.0 {
            return Err(ConfigError::Invalid("retriever.k1 must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.retriever.b) {
            return Err(ConfigError::Invalid("retriever.b must be in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.oracle.constant) {
            return Err(ConfigError::Invalid(
                "oracle.constant must be in [0,1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.synth.noise) {
            return Err(ConfigError::Invalid("synth.noise must be in [0,1]".into()));
        }
        if self.oracle.concurrency < 1 {
            return Err(ConfigError::Invalid(
                "oracle.concurrency must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
