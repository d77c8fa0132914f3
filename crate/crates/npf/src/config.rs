//! Experiment configuration: JSON documents with strict key checking,
//! range validation that names the offending field, and defaults that
//! round-trip into the manifest.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{NpfError, Result};
use crate::grid::TimeGrid;
use crate::problems::{InlineProblemSpec, BUILTIN_NAMES};
use crate::regression::RegressionConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    pub mc: McSpec,
    #[serde(default)]
    pub penalty_levels: Vec<u64>,
    #[serde(default)]
    pub regression: RegressionConfig,
    #[serde(default)]
    pub queries: Vec<QuerySpec>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// Either the name of a built-in problem or an inline coefficient spec.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Named(String),
    Inline(Box<InlineProblemSpec>),
}

impl<'de> Deserialize<'de> for ProblemSpec {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: Deserializer<'de>,
    {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::String(name) => Ok(ProblemSpec::Named(name)),
            serde_json::Value::Object(_) => {
                let inline: InlineProblemSpec = serde_json::from_value(value)
                    .map_err(|e| D::Error::custom(format!("inline problem: {e}")))?;
                Ok(ProblemSpec::Inline(Box::new(inline)))
            }
            other => Err(D::Error::custom(format!(
                "problem must be a built-in name or an inline object, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub t0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.horizon, self.steps)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Parses and validates a JSON experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| NpfError::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if let ProblemSpec::Named(name) = &self.problem {
            if !BUILTIN_NAMES.contains(&name.as_str()) {
                return Err(NpfError::config(format!(
                    "unknown problem `{name}`; built-ins are {}",
                    BUILTIN_NAMES.join(", ")
                )));
            }
        }
        if self.grid.steps == 0 {
            return Err(NpfError::config("grid.steps must be >= 1"));
        }
        if !(self.grid.horizon.is_finite() && self.grid.horizon > 0.0) {
            return Err(NpfError::config("grid.T must be > 0"));
        }
        if !(self.grid.t0.is_finite() && self.grid.t0 >= 0.0) {
            return Err(NpfError::config("grid.t0 must be >= 0"));
        }
        if self.grid.t0 >= self.grid.horizon {
            return Err(NpfError::config("grid.t0 must be < grid.T"));
        }
        if self.mc.n_paths == 0 {
            return Err(NpfError::config("mc.n_paths must be >= 1"));
        }
        if self.penalty_levels.contains(&0) {
            return Err(NpfError::config("penalty_levels entries must be >= 1"));
        }
        if self.penalty_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NpfError::config("penalty_levels must be strictly increasing"));
        }
        self.regression
            .validate()
            .map_err(|e| NpfError::config(format!("regression: {e}")))?;
        for (i, q) in self.queries.iter().enumerate() {
            if !(q.t.is_finite() && (0.0..self.grid.horizon).contains(&q.t)) {
                return Err(NpfError::config(format!(
                    "queries[{i}].t must lie in [0, {})",
                    self.grid.horizon
                )));
            }
            if q.x.is_empty() || q.x.iter().any(|v| !v.is_finite()) {
                return Err(NpfError::config(format!(
                    "queries[{i}].x must be a non-empty finite vector"
                )));
            }
        }
        Ok(())
    }
}
