//! Run configuration: JSON file, command-line overrides, validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::env::{EnvironmentSpec, Model, RadiusLaw};
use crate::sim::DEFAULT_NODE_BUDGET;

/// Overrides the default node budget; flags and config files still win.
pub const BUDGET_ENV_VAR: &str = "CPOLYMER_BUDGET_NODES";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelConfig {
    Gaussian {
        #[serde(default)]
        beta: f64,
        #[serde(default)]
        gamma: f64,
    },
    LognormalUniform {
        #[serde(default)]
        beta: f64,
        #[serde(default)]
        gamma: f64,
    },
    /// Two-point phase with log-normal radius of scale `beta`.
    RademacherPhase {
        t: f64,
        #[serde(default)]
        beta: f64,
    },
    Constant {
        re: f64,
        #[serde(default)]
        im: f64,
    },
}

impl ModelConfig {
    pub fn to_model(&self) -> Model {
        match *self {
            ModelConfig::Gaussian { beta, gamma } => Model::GaussianIndep { beta, gamma },
            ModelConfig::LognormalUniform { beta, gamma } => Model::LogNormalUniformPhase { beta, gamma },
            ModelConfig::RademacherPhase { t, beta } => Model::RademacherPhase {
                t,
                radius: if beta == 0.0 {
                    RadiusLaw::Unit
                } else {
                    RadiusLaw::LogNormal { beta }
                },
            },
            ModelConfig::Constant { re, im } => Model::Constant {
                c: Complex64::new(re, im),
            },
        }
    }

    /// Same family at another `(β, γ)`; only for families that have both.
    pub fn at(&self, beta: f64, gamma: f64) -> Option<ModelConfig> {
        match self {
            ModelConfig::Gaussian { .. } => Some(ModelConfig::Gaussian { beta, gamma }),
            ModelConfig::LognormalUniform { .. } => Some(ModelConfig::LognormalUniform { beta, gamma }),
            _ => None,
        }
    }
}

/// One axis of a diagram grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn value(&self, i: usize) -> f64 {
        if self.steps == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64
        }
    }
}

/// `BLO:BHI:BSTEPS,GLO:GHI:GSTEPS`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    pub beta: Axis,
    pub gamma: Axis,
}

impl FromStr for GridSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let axis = |part: &str| -> Result<Axis, ConfigError> {
            let f: Vec<&str> = part.split(':').collect();
            if f.len() != 3 {
                return Err(invalid(format!("grid axis '{part}' is not LO:HI:STEPS")));
            }
            let num = |x: &str| x.trim().parse::<f64>().map_err(|_| invalid(format!("bad grid number '{x}'")));
            let steps = f[2]
                .trim()
                .parse::<usize>()
                .map_err(|_| invalid(format!("bad grid step count '{}'", f[2])))?;
            let a = Axis {
                lo: num(f[0])?,
                hi: num(f[1])?,
                steps,
            };
            if !(a.lo.is_finite() && a.hi.is_finite()) || a.lo > a.hi || a.lo < 0.0 || a.steps == 0 {
                return Err(invalid(format!("grid axis '{part}' needs 0 <= LO <= HI and STEPS >= 1")));
            }
            Ok(a)
        };
        let (b, g) = s
            .split_once(',')
            .ok_or_else(|| invalid(format!("grid '{s}' needs a beta and a gamma axis")))?;
        Ok(GridSpec {
            beta: axis(b)?,
            gamma: axis(g)?,
        })
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{},{}:{}:{}",
            self.beta.lo, self.beta.hi, self.beta.steps, self.gamma.lo, self.gamma.hi, self.gamma.steps
        )
    }
}

impl TryFrom<String> for GridSpec {
    type Error = ConfigError;
    fn try_from(s: String) -> Result<Self, ConfigError> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FunctionalName {
    #[default]
    FreeEnergy,
    WFreeEnergy,
    AbsMoment,
    Ratio4,
}

fn default_b() -> u32 {
    2
}
fn default_n() -> u32 {
    20
}
fn default_replicas() -> usize {
    32
}
fn default_seed() -> u64 {
    1
}
fn default_alpha() -> f64 {
    2.0
}
fn default_resamples() -> usize {
    4000
}

/// Default node budget, taken from [`BUDGET_ENV_VAR`] when set.
pub fn default_budget() -> u64 {
    std::env::var(BUDGET_ENV_VAR)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_NODE_BUDGET)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(default = "default_b")]
    pub b: u32,
    #[serde(default = "default_n")]
    pub n: u32,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget_nodes: u64,
    #[serde(default)]
    pub strict: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub functional: FunctionalName,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_resamples")]
    pub phase_resamples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub only: Vec<String>,
}

impl RunConfig {
    /// Reads `path` (if any) and applies `overrides` on top, key by key.
    pub fn load(path: Option<&Path>, overrides: Map<String, Value>) -> Result<Self, ConfigError> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                match serde_json::from_str::<Value>(&text)? {
                    Value::Object(m) => m,
                    _ => return Err(invalid("config file must hold a JSON object")),
                }
            }
            None => Map::new(),
        };
        root.extend(overrides);
        root.entry("model").or_insert_with(|| Value::from("gaussian"));
        let cfg: RunConfig = serde_json::from_value(Value::Object(root))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.b < 2 {
            return Err(invalid(format!("b = {} must be at least 2", self.b)));
        }
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas must be at least 1"));
        }
        if self.budget_nodes == 0 {
            return Err(invalid("budget-nodes must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha must be positive"));
        }
        self.environment()?;
        Ok(())
    }

    pub fn environment(&self) -> Result<EnvironmentSpec, ConfigError> {
        EnvironmentSpec::new(self.model.to_model(), self.b).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
