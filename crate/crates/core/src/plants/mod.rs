//! Benchmark plants and the interface the simulator drives them through.

pub mod manipulator;
pub mod spacecraft;

use std::sync::OnceLock;

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

use crate::registry::Registry;
use crate::sign::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("mass matrix singular at psi = {psi}")]
    SingularMassMatrix { psi: f64 },
    #[error("manipulator inertia degenerate (denominator {denominator})")]
    DegenerateInertia { denominator: f64 },
    #[error("plant.k: scale {k} times bound {bound} on {param} must be < 1")]
    InfeasibleScale {
        param: &'static str,
        k: f64,
        bound: f64,
    },
    #[error("state guard {what} violated (value {value})")]
    GuardViolation { what: &'static str, value: f64 },
    #[error("{field}: {reason}")]
    InvalidParameter { field: String, reason: String },
}

impl PlantError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_finite_state(x: &Vector) -> Result<(), PlantError> {
    match x.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(PlantError::GuardViolation {
            what: "finite state",
            value,
        }),
        None => Ok(()),
    }
}

/// Sliding variables `s` with the affine split `ṡ = f + G u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingTerms {
    pub s: Vector,
    pub f: Vector,
    pub g: Matrix,
}

pub trait Plant: Send + Sync {
    fn kind(&self) -> &'static str;
    fn state_names(&self) -> Vec<String>;
    fn initial_state(&self) -> Vector;

    /// State derivative under the true parameters.
    fn derivative(&self, t: f64, x: &Vector, u: &Vector) -> Result<Vector, PlantError>;

    /// Sliding terms under the nominal parameters (what the controller sees).
    fn sliding(&self, t: f64, x: &Vector) -> Result<SlidingTerms, PlantError>;

    /// Sliding terms under the true parameters.
    fn true_sliding(&self, t: f64, x: &Vector) -> Result<SlidingTerms, PlantError>;

    fn check_guard(&self, x: &Vector) -> Result<(), PlantError>;

    /// Performance variables scored by the metrics, with their names and bands.
    fn tracked_names(&self) -> Vec<String>;
    fn tracked(&self, t: f64, x: &Vector) -> Vec<f64>;
    fn default_bands(&self) -> Vec<f64>;

    /// Whether the true parameters lie in the declared uncertainty box.
    fn within_declared_bounds(&self) -> bool;

    /// `(name, lo, hi)` per uncertain parameter.
    fn uncertainty_box(&self) -> Vec<(String, f64, f64)>;
    fn true_uncertain_values(&self) -> Vec<f64>;

    /// Number of state coordinates the gain depends on.
    fn grid_dim(&self) -> usize;

    /// Gain `G` at the given uncertain parameter values and state coordinates.
    fn gain_at(&self, uncertain: &[f64], grid_point: &[f64]) -> Result<Matrix, PlantError>;
}

pub type PlantFactory = fn(&Value, &Value, u64) -> Result<Box<dyn Plant>, PlantError>;

fn parse<T: DeserializeOwned>(section: &str, v: &Value) -> Result<T, PlantError> {
    serde_json::from_value(v.clone()).map_err(|e| PlantError::invalid(section, e.to_string()))
}

fn build_spacecraft(plant: &Value, sliding: &Value, seed: u64) -> Result<Box<dyn Plant>, PlantError> {
    let spec: spacecraft::SpacecraftSpec = parse("plant", plant)?;
    let sl: spacecraft::SpacecraftSliding = parse("sliding", sliding)?;
    Ok(Box::new(spacecraft::Spacecraft::from_spec(&spec, &sl, seed)?))
}

fn build_manipulator(plant: &Value, sliding: &Value, _seed: u64) -> Result<Box<dyn Plant>, PlantError> {
    let spec: manipulator::ManipulatorSpec = parse("plant", plant)?;
    let sl: manipulator::ManipulatorSliding = parse("sliding", sliding)?;
    Ok(Box::new(manipulator::Manipulator::from_spec(&spec, &sl)?))
}

pub fn plant_registry() -> &'static Registry<PlantFactory> {
    static REG: OnceLock<Registry<PlantFactory>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("plant kind")
            .with("spacecraft", build_spacecraft as PlantFactory)
            .with("manipulator", build_manipulator)
    })
}

/// Builds the plant named by `plant.kind`.
pub fn build_plant(plant: &Value, sliding: &Value, seed: u64) -> Result<Box<dyn Plant>, PlantError> {
    let kind = plant
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| PlantError::invalid("plant.kind", "missing"))?;
    let factory = plant_registry()
        .get(kind)
        .map_err(|e| PlantError::invalid("plant.kind", e.to_string()))?;
    factory(plant, sliding, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn unknown_kind_names_field() {
        let err = build_plant(&json!({"kind": "boat"}), &json!({}), 0).err().unwrap();
        assert!(err.to_string().starts_with("plant.kind"));
    }

    #[test]
    fn builds_manipulator_from_json() {
        let plant = json!({
            "kind": "manipulator",
            "ranges": {"m1": [0.7, 1.1], "m2": [0.8, 1.4], "l1": [0.9, 1.3], "l2": [0.8, 1.3]},
            "true_params": {"m1": 0.7, "m2": 0.8, "l1": 1.3, "l2": 1.3}
        });
        let p = build_plant(&plant, &json!({"alpha": 5.0}), 0).unwrap();
        assert_eq!(p.kind(), "manipulator");
        assert!(p.within_declared_bounds());
        let bad = build_plant(&plant, &json!({"alpha": 5.0, "beta": 1}), 0).err().unwrap();
        assert!(bad.to_string().contains("sliding"));
    }
}
