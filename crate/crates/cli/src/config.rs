//! Per-subcommand config documents. A document is read from `--config` (or
//! starts empty), command-line flags are written into it, and the result is
//! deserialized strictly and echoed next to the outputs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use vimo_core::diffusion::{SamplerConfig, TrainConfig};
use vimo_core::net::ModelConfig;
use vimo_core::pose::{DatasetConfig, MotionKind, DEFAULT_CONF_THRESHOLD};
use vimo_core::render::RenderSpec;

pub const RUN_SCHEMA: &str = "run-v1";

/// Environment variable naming the default dataset directory for `train`.
pub const DATA_ROOT_ENV: &str = "VIMO_DATA_ROOT";

/// Invalid or missing configuration; exits with code 2.
#[derive(Debug)]
pub struct ConfigError {
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            field: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn default_schema() -> String {
    RUN_SCHEMA.to_string()
}

fn default_conf() -> f64 {
    DEFAULT_CONF_THRESHOLD
}

fn default_window() -> usize {
    150
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    #[default]
    Pose,
    /// Beat-pulse features standing in for music.
    Beats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    /// Dataset manifest or the directory holding `manifest.json`.
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub condition: Conditioning,
    /// Train only on these kinds; empty means all.
    #[serde(default)]
    pub kinds: Vec<MotionKind>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_window")]
    pub window_stride: usize,
    #[serde(default = "default_conf")]
    pub conf_threshold: f64,
    /// Optimizer steps; when absent, `train.epochs` passes are run.
    pub steps: Option<u64>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "ModelConfig::tiny")]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    /// One conditioned sample set per pose file.
    #[serde(default)]
    pub poses: Vec<PathBuf>,
    /// Beat track for beat-conditioned models.
    pub music: Option<PathBuf>,
    /// Frames to generate when not conditioned on poses.
    pub length: Option<usize>,
    #[serde(default = "one")]
    pub num_samples: usize,
    #[serde(default = "default_conf")]
    pub conf_threshold: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn one() -> usize {
    1
}

fn default_mask() -> String {
    "inbetween:10,10".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// `inbetween:H,T`, `infill:A,B`, `root`, `all` or `none`.
    #[serde(default = "default_mask")]
    pub mask: String,
    pub pose: Option<PathBuf>,
    #[serde(default = "default_conf")]
    pub conf_threshold: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

fn default_style_windows() -> Option<usize> {
    Some(4)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizeDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub backbone: Option<PathBuf>,
    /// Manifest of the style dataset.
    pub style_data: Option<PathBuf>,
    #[serde(default)]
    pub kinds: Vec<MotionKind>,
    #[serde(default = "default_style_windows")]
    pub max_windows: Option<usize>,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_window")]
    pub window_stride: usize,
    #[serde(default = "default_conf")]
    pub conf_threshold: f64,
    pub steps: Option<u64>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_sigma() -> f64 {
    vimo_core::metrics::DEFAULT_BEAT_SIGMA
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    /// Directory of generated motion files.
    pub generated: Option<PathBuf>,
    /// Directory of reference motions, or a dataset manifest.
    pub reference: Option<PathBuf>,
    pub music: Option<PathBuf>,
    #[serde(default = "default_sigma")]
    pub beat_sigma: f64,
    /// Recorded in the report's provenance when given.
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderDoc {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub seed: u64,
    pub motion: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub condition: Option<PathBuf>,
    #[serde(default)]
    pub render: RenderSpec,
}

/// Sets `value` at a dotted path such as `sampler.seed`, creating objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::field(&parts[..i].join("."), "expected an object"))?;
        if i + 1 == parts.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// Reads the config document, applies `overrides`, and parses it.
pub fn load_doc<T: DeserializeOwned>(path: Option<&Path>, overrides: Vec<(&str, Value)>) -> Result<T, ConfigError> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::field("config", format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| ConfigError::field("config", format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Map::new()),
    };
    if !root.is_object() {
        return Err(ConfigError::field("config", "document must be a JSON object"));
    }
    for (key, value) in overrides {
        set_path(&mut root, key, value)?;
    }
    let schema = root.get("schema").and_then(Value::as_str).unwrap_or(RUN_SCHEMA);
    if schema != RUN_SCHEMA {
        return Err(ConfigError::field("schema", format!("{schema:?}, expected {RUN_SCHEMA:?}")));
    }
    serde_json::from_value(root).map_err(|e| ConfigError::general(format!("config: {e}")))
}

/// A path the config must name and that must exist.
pub fn required_path(field: &str, value: &Option<PathBuf>) -> Result<PathBuf, ConfigError> {
    let p = value
        .as_ref()
        .ok_or_else(|| ConfigError::field(field, "required"))?;
    if !p.exists() {
        return Err(ConfigError::field(field, format!("{} does not exist", p.display())));
    }
    Ok(p.clone())
}

pub fn optional_path(field: &str, value: &Option<PathBuf>) -> Result<Option<PathBuf>, ConfigError> {
    match value {
        Some(_) => required_path(field, value).map(Some),
        None => Ok(None),
    }
}

/// Accepts either a file or a directory containing `file_name`.
pub fn file_in(path: PathBuf, file_name: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file_name)
    } else {
        path
    }
}
