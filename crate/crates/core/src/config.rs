//! Experiment configuration: schema check, typed parse, semantic validation.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{ControllerConfig, GainDecomposition, DEFAULT_DELTA};
use crate::decomposition::{PsoSettings, SampleSettings};
use crate::plants::{build_plant, Plant, PlantError};
use crate::sign::{matrix_from_rows, Matrix, Vector};
use crate::sim::SimSettings;

pub const SCHEMA: &str = include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/schema.json"));

/// A validation failure naming the offending field in dotted form.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<PlantError> for ConfigError {
    fn from(e: PlantError) -> Self {
        match e {
            PlantError::InvalidParameter { field, reason } => Self::new(field, reason),
            PlantError::InfeasibleScale { .. } => Self::new("plant.k", e.to_string()),
            other => Self::new("plant", other.to_string()),
        }
    }
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSection {
    pub m: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub f_bar: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub rho: f64,
    pub f_bar: Vec<f64>,
    #[serde(default)]
    pub eta_bar: Option<Vec<f64>>,
    #[serde(default = "default_delta")]
    pub delta_s: f64,
    #[serde(default = "default_delta")]
    pub delta_v: f64,
    #[serde(default)]
    pub smoothing: bool,
    pub decomposition: DecompositionSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Start of the tail window; half the horizon when absent.
    #[serde(default)]
    pub tail_start: Option<f64>,
    /// Convergence bands per tracked variable; plant defaults when absent.
    #[serde(default)]
    pub bands: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSection {
    #[serde(default)]
    pub samples: SampleSettings,
    #[serde(default)]
    pub pso: PsoSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Where the parameter values come from.
    #[serde(default)]
    pub comment: Option<String>,
    pub plant: Value,
    pub sliding: Value,
    pub controller: ControllerSection,
    pub sim: SimSettings,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub decompose: DecomposeSection,
}

fn validator() -> &'static jsonschema::Validator {
    static V: OnceLock<jsonschema::Validator> = OnceLock::new();
    V.get_or_init(|| {
        let schema: Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
        jsonschema::validator_for(&schema).expect("bundled schema compiles")
    })
}

/// `/controller/rho` becomes `controller.rho`; array indices stay numeric.
fn dotted(pointer: &str) -> String {
    let s = pointer.trim_start_matches('/').replace('/', ".");
    if s.is_empty() {
        "config".into()
    } else {
        s
    }
}

/// Checks `v` against the published schema and reports the first violation.
pub fn check_schema(v: &Value) -> Result<(), ConfigError> {
    match validator().iter_errors(v).next() {
        None => Ok(()),
        Some(e) => Err(ConfigError::new(
            dotted(&e.instance_path().to_string()),
            e.to_string(),
        )),
    }
}

fn matrix(field: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix, ConfigError> {
    let a = matrix_from_rows(rows).ok_or_else(|| ConfigError::new(field, "rows must have equal length"))?;
    if a.nrows() != n || a.ncols() != n {
        return Err(ConfigError::new(field, format!("must be {n}x{n}")));
    }
    Ok(a)
}

impl ExperimentConfig {
    pub fn from_value(v: &Value) -> Result<Self, ConfigError> {
        check_schema(v)?;
        serde_json::from_value(v.clone()).map_err(|e| ConfigError::new("config", e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<(Self, Value), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Ok((Self::from_value(&v)?, v))
    }

    pub fn controller_config(&self) -> Result<ControllerConfig, ConfigError> {
        let c = &self.controller;
        let n = c.f_bar.len();
        let d = &c.decomposition;
        let dec = GainDecomposition::new(
            matrix("controller.decomposition.m", &d.m, n)?,
            matrix("controller.decomposition.q", &d.q, n)?,
            matrix("controller.decomposition.f_bar", &d.f_bar, n)?,
        )
        .map_err(|e| ConfigError::new("controller.decomposition", e.to_string()))?;
        let cfg = ControllerConfig {
            rho: c.rho,
            f_bar: Vector::from_vec(c.f_bar.clone()),
            eta_bar: c.eta_bar.clone().map_or_else(|| Vector::zeros(n), Vector::from_vec),
            decomposition: dec,
            delta_s: c.delta_s,
            delta_v: c.delta_v,
            smoothing: self.sim.smoothing.unwrap_or(c.smoothing),
        };
        cfg.validate().map_err(|e| match e {
            crate::controller::ControllerError::InvalidParameter { field, reason } => {
                ConfigError::new(field, reason)
            }
            other => ConfigError::new("controller", other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn plant(&self, seed: u64) -> Result<Box<dyn Plant>, ConfigError> {
        Ok(build_plant(&self.plant, &self.sliding, seed)?)
    }

    pub fn sim_settings(&self, seed: u64) -> Result<SimSettings, ConfigError> {
        let mut s = self.sim.clone();
        s.seed = seed;
        s.validate().map_err(|e| match e {
            crate::sim::SimError::Settings(msg) => match msg.split_once(": ") {
                Some((field, reason)) => ConfigError::new(field, reason),
                None => ConfigError::new("sim", msg),
            },
            other => ConfigError::new("sim", other.to_string()),
        })?;
        Ok(s)
    }

    pub fn tail_start(&self) -> f64 {
        self.metrics.tail_start.unwrap_or(0.5 * self.sim.horizon)
    }

    /// Everything a run needs, checked against each other.
    pub fn validate(&self, seed: u64) -> Result<(), ConfigError> {
        let cfg = self.controller_config()?;
        if !cfg.decomposition.is_admissible() {
            return Err(ConfigError::new(
                "controller.decomposition.f_bar",
                format!("not admissible: norms {:?}", cfg.decomposition.norms()),
            ));
        }
        let plant = self.plant(seed)?;
        self.sim_settings(seed)?;
        let names = plant.tracked_names();
        if let Some(b) = &self.metrics.bands {
            if b.len() != names.len() {
                return Err(ConfigError::new(
                    "metrics.bands",
                    format!("need {} bands ({})", names.len(), names.join(", ")),
                ));
            }
        }
        let m = plant.sliding(0.0, &plant.initial_state())?.s.len();
        if cfg.decomposition.dim() != m {
            return Err(ConfigError::new(
                "controller.f_bar",
                format!("plant has {m} sliding variables"),
            ));
        }
        if self.tail_start() > self.sim.horizon {
            return Err(ConfigError::new("metrics.tail_start", "must not exceed sim.horizon"));
        }
        Ok(())
    }
}

/// Keys sorted at every level so equal configs hash equally regardless of
/// formatting or key order.
fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), canonical(&m[k]))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

/// SHA-256 of the canonical JSON, hex encoded.
pub fn config_hash(v: &Value) -> String {
    let bytes = serde_json::to_vec(&canonical(v)).expect("values serialize");
    hex::encode(Sha256::digest(bytes))
}
