//! Per-command JSON documents, loading and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cmde::datagen::{read_dataset_with_arms, Dataset, GeneratorConfig};
use cmde::ensemble::TrainingConfig;
use cmde::learner::ModelSpec;
use cmde::metrics::MetricKind;
use cmde::synthetic::{OracleConfig, SyntheticExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration.
    Config { message: String, field: Option<String> },
    Runtime(cmde::Error),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            message: message.into(),
            field: None,
        }
    }

    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            message: message.into(),
            field: Some(field.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config { message, field } => serde_json::json!({
                "error": { "kind": "config", "field": field, "message": message }
            }),
            CliError::Runtime(e) => serde_json::json!({
                "error": { "kind": "runtime", "message": e.to_string() }
            }),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { message, field: Some(p) } => write!(f, "config error at `{p}`: {message}"),
            CliError::Config { message, field: None } => write!(f, "config error: {message}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<cmde::Error> for CliError {
    fn from(e: cmde::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `text`, reporting the path of the offending field on failure.
pub fn parse<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config {
            message: e.inner().to_string(),
            field: (path != ".").then_some(path),
        }
    })
}

pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

/// Makes `p` absolute relative to `base` (the config file's directory).
pub fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn default_arms() -> usize {
    2
}

/// Either a CSV file or a generator run in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GeneratorConfig>,
    #[serde(default = "default_arms")]
    pub arms: usize,
}

impl DataSource {
    pub fn validate(&self, field: &str) -> CliResult<()> {
        match (&self.path, &self.generate) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(CliError::field(field, "set exactly one of `path` and `generate`")),
        }
    }

    pub fn resolve(&mut self, base: &Path) {
        if let Some(p) = &mut self.path {
            resolve(base, p);
        }
    }

    pub fn load(&self) -> CliResult<Dataset> {
        match (&self.path, &self.generate) {
            (Some(p), _) => Ok(read_dataset_with_arms(p, self.arms)?),
            (None, Some(g)) => Ok(g.generate()?),
            (None, None) => Err(CliError::config("data source is empty")),
        }
    }
}

/// Evenly spaced one-dimensional query points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid1d {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl Grid1d {
    pub fn validate(&self, field: &str) -> CliResult<()> {
        if self.points < 2 || !(self.to > self.from) {
            return Err(CliError::field(field, "grid needs `to > from` and at least 2 points"));
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        let step = (self.to - self.from) / (self.points - 1) as f64;
        (0..self.points).map(|i| vec![self.from + step * i as f64]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub data: GeneratorConfig,
}

fn default_members() -> usize {
    10
}

/// The ensemble is built from `seed`, batches are shuffled from `seed + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    pub model: ModelSpec,
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default)]
    pub training: TrainingConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid1d>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpFitConfig {
    pub data: DataSource,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Query points; the training rows when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid1d>,
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Pehe]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub data: DataSource,
    /// CSV with `yhat0` and `yhat1` columns, one row per data row.
    pub predictions: PathBuf,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ate_true: Option<f64>,
}

fn default_widths() -> Vec<usize> {
    vec![64, 4096]
}

fn default_draws() -> usize {
    cmde::kernelcheck::DEFAULT_DRAWS
}

fn default_kernel_grid() -> Vec<Vec<f64>> {
    [-4.0, -2.0, 0.0, 2.0, 4.0].iter().map(|&x| vec![x]).collect()
}

fn default_replicates() -> usize {
    10
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_kernel_grid")]
    pub grid: Vec<Vec<f64>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

pub type FigSyntheticConfig = SyntheticExperimentConfig;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_activation_names_the_field() {
        let text = r#"{"data": {"generate": {"generator": "synthetic", "seed": 1}},
            "model": {"coregionalization": {"variant": "icm3", "alpha_h": 0, "alpha_t": 0, "alpha_ht": 1},
                      "architectures": [{"hidden": [8], "activation": "sigmoidal", "sigma_w2": 0.1}]}}"#;
        match parse::<TrainConfig>(text) {
            Err(CliError::Config { field: Some(f), .. }) => assert!(f.contains("activation"), "{f}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn defaults_are_expanded() {
        let text = r#"{"data": {"generate": {"generator": "synthetic", "seed": 1}},
            "model": {"coregionalization": {"variant": "icm3", "alpha_h": 0, "alpha_t": 0, "alpha_ht": 1},
                      "architectures": [{"hidden": [8], "activation": "relu", "sigma_w2": 0.1}]}}"#;
        let cfg: TrainConfig = parse(text).unwrap();
        let json = serde_json::to_value(&cfg).unwrap();
        assert_eq!(json["members"], 10);
        assert_eq!(json["training"]["batch_size"], 128);
        assert_eq!(json["data"]["generate"]["n"], 3000);
    }

    #[test]
    fn data_source_needs_exactly_one_origin() {
        let both: DataSource = parse(r#"{"path": "a.csv", "generate": {"generator": "synthetic", "seed": 2}}"#).unwrap();
        assert!(both.validate("data").is_err());
        let none: DataSource = parse("{}").unwrap();
        assert!(none.validate("data").is_err());
    }

    #[test]
    fn grid_rows() {
        let g = Grid1d { from: -1.0, to: 1.0, points: 3 };
        assert_eq!(g.rows(), vec![vec![-1.0], vec![0.0], vec![1.0]]);
        assert!(Grid1d { from: 0.0, to: 0.0, points: 3 }.validate("grid").is_err());
    }
}
