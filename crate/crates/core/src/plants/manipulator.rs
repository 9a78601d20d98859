//! Two-link planar arm, angles measured from the upward vertical.
//!
//! State layout: `[q1, q̇1, q2, q̇2]`, control `u = τ`.

use serde::{Deserialize, Serialize};

use super::{check_finite_state, Plant, PlantError, SlidingTerms};
use crate::sign::{Matrix, Vector};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
}

impl ManipulatorParams {
    pub fn as_array(&self) -> [f64; 4] {
        [self.m1, self.m2, self.l1, self.l2]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            m1: v[0],
            m2: v[1],
            l1: v[2],
            l2: v[3],
        }
    }

    fn validate(&self, field: &'static str) -> Result<(), PlantError> {
        if self.as_array().iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(PlantError::invalid(field, "masses and lengths must be > 0"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorRanges {
    pub m1: [f64; 2],
    pub m2: [f64; 2],
    pub l1: [f64; 2],
    pub l2: [f64; 2],
}

impl ManipulatorRanges {
    pub const BENCHMARK: ManipulatorRanges = ManipulatorRanges {
        m1: [0.7, 1.1],
        m2: [0.8, 1.4],
        l1: [0.9, 1.3],
        l2: [0.8, 1.3],
    };

    pub const NAMES: [&'static str; 4] = ["m1", "m2", "l1", "l2"];

    pub fn as_array(&self) -> [[f64; 2]; 4] {
        [self.m1, self.m2, self.l1, self.l2]
    }

    pub fn midpoint(&self) -> ManipulatorParams {
        let v: Vec<f64> = self.as_array().iter().map(|r| 0.5 * (r[0] + r[1])).collect();
        ManipulatorParams::from_slice(&v)
    }

    pub fn contains(&self, p: &ManipulatorParams) -> bool {
        self.as_array()
            .iter()
            .zip(p.as_array())
            .all(|(r, v)| r[0] <= v && v <= r[1])
    }
}

/// Common factor `(m1 + m2) − m2 cos²(q1 − q2)`.
pub fn inertia_denominator(p: &ManipulatorParams, q1: f64, q2: f64) -> f64 {
    let c = (q1 - q2).cos();
    (p.m1 + p.m2) - p.m2 * c * c
}

/// Drift accelerations `[A]₂, [A]₄` and input gain `B = M(q)⁻¹` in closed form.
pub fn closed_form(
    x: &Vector,
    p: &ManipulatorParams,
    g: f64,
) -> Result<(Vector, Matrix), PlantError> {
    let (q1, w1, q2, w2) = (x[0], x[1], x[2], x[3]);
    let (s1, s3) = (q1.sin(), q2.sin());
    let c = (q1 - q2).cos();
    let sg = (q1 - q2).sin();
    let d = inertia_denominator(p, q1, q2);
    if !(d > 1e-12 * (p.m1 + p.m2)) {
        return Err(PlantError::DegenerateInertia { denominator: d });
    }
    let (m1, m2, l1, l2) = (p.m1, p.m2, p.l1, p.l2);
    let mt = m1 + m2;
    let den = l1 * l2 * d;
    let a2 = (-sg * (m2 * l1 * l2 * c * w1 * w1 + m2 * l2 * l2 * w2 * w2)
        + g * l2 * (mt * s1 - m2 * s3 * c))
        / den;
    let a4 = (sg * (mt * l1 * l1 * w1 * w1 + m2 * l1 * l2 * c * w2 * w2)
        + mt * g * l1 * (s3 - s1 * c))
        / den;
    let bden = m2 * l1 * l1 * l2 * l2 * d;
    let b12 = -m2 * l1 * l2 * c / bden;
    let b = Matrix::from_row_slice(
        2,
        2,
        &[m2 * l2 * l2 / bden, b12, b12, mt * l1 * l1 / bden],
    );
    Ok((Vector::from_vec(vec![a2, a4]), b))
}

pub fn manipulator_dynamics(
    x: &Vector,
    u: &Vector,
    p: &ManipulatorParams,
    g: f64,
) -> Result<Vector, PlantError> {
    let (a, b) = closed_form(x, p, g)?;
    let acc = a + b * u;
    Ok(Vector::from_vec(vec![x[1], acc[0], x[3], acc[1]]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

impl Target {
    pub const BENCHMARK: Target = Target {
        amplitude: 0.01,
        omega: 5.0,
        phase: std::f64::consts::FRAC_PI_2,
    };

    /// `(q_d, q̇_d, q̈_d)` at time `t`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let arg = self.omega * t + self.phase;
        let (s, c) = arg.sin_cos();
        (
            self.amplitude * s,
            self.amplitude * self.omega * c,
            -self.amplitude * self.omega * self.omega * s,
        )
    }
}

/// Reference `0.01 sin(5t + π/2)` shared by both joints.
pub fn target_trajectory(t: f64) -> (f64, f64, f64) {
    Target::BENCHMARK.at(t)
}

/// `s = ė + α e` and `ṡ = f + G u` under `p`.
pub fn manipulator_sliding(
    x: &Vector,
    target: (f64, f64, f64),
    alpha: f64,
    p: &ManipulatorParams,
    g: f64,
) -> Result<SlidingTerms, PlantError> {
    let (qd, qd_dot, qd_ddot) = target;
    let e = Vector::from_vec(vec![x[0] - qd, x[2] - qd]);
    let e_dot = Vector::from_vec(vec![x[1] - qd_dot, x[3] - qd_dot]);
    let (a, b) = closed_form(x, p, g)?;
    Ok(SlidingTerms {
        s: &e_dot + alpha * &e,
        f: a.add_scalar(-qd_ddot) + alpha * e_dot,
        g: b,
    })
}

fn default_g() -> f64 {
    GRAVITY
}

fn default_target() -> Target {
    Target::BENCHMARK
}

/// `plant` block of an experiment config with `kind = "manipulator"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorSpec {
    pub kind: String,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub case: Option<String>,
    /// Parameters used for `f0`; the range midpoint when absent.
    #[serde(default)]
    pub nominal: Option<ManipulatorParams>,
    pub ranges: ManipulatorRanges,
    pub true_params: ManipulatorParams,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default)]
    pub initial: Option<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulatorSliding {
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct Manipulator {
    pub nominal: ManipulatorParams,
    pub truth: ManipulatorParams,
    pub ranges: ManipulatorRanges,
    pub g: f64,
    pub alpha: f64,
    pub target: Target,
    pub initial: Vector,
}

impl Manipulator {
    pub fn from_spec(spec: &ManipulatorSpec, sliding: &ManipulatorSliding) -> Result<Self, PlantError> {
        for (name, r) in ManipulatorRanges::NAMES.iter().zip(spec.ranges.as_array()) {
            if !(r[0].is_finite() && r[1].is_finite() && 0.0 < r[0] && r[0] <= r[1]) {
                return Err(PlantError::invalid(
                    "plant.ranges",
                    format!("{name} must be an interval [lo, hi] with 0 < lo <= hi"),
                ));
            }
        }
        let nominal = spec.nominal.unwrap_or_else(|| spec.ranges.midpoint());
        nominal.validate("plant.nominal")?;
        spec.true_params.validate("plant.true_params")?;
        if !(spec.g.is_finite() && spec.g >= 0.0) {
            return Err(PlantError::invalid("plant.g", "must be >= 0"));
        }
        if !(sliding.alpha.is_finite() && sliding.alpha > 0.0) {
            return Err(PlantError::invalid(
                "sliding.alpha",
                format!("must be > 0, got {}", sliding.alpha),
            ));
        }
        let initial = Vector::from_row_slice(&spec.initial.unwrap_or([0.0; 4]));
        check_finite_state(&initial)
            .map_err(|_| PlantError::invalid("plant.initial", "must be finite"))?;
        Ok(Self {
            nominal,
            truth: spec.true_params,
            ranges: spec.ranges,
            g: spec.g,
            alpha: sliding.alpha,
            target: spec.target,
            initial,
        })
    }
}

impl Plant for Manipulator {
    fn kind(&self) -> &'static str {
        "manipulator"
    }

    fn state_names(&self) -> Vec<String> {
        ["q1", "q1_dot", "q2", "q2_dot"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    fn initial_state(&self) -> Vector {
        self.initial.clone()
    }

    fn derivative(&self, _t: f64, x: &Vector, u: &Vector) -> Result<Vector, PlantError> {
        manipulator_dynamics(x, u, &self.truth, self.g)
    }

    fn sliding(&self, t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        manipulator_sliding(x, self.target.at(t), self.alpha, &self.nominal, self.g)
    }

    fn true_sliding(&self, t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        manipulator_sliding(x, self.target.at(t), self.alpha, &self.truth, self.g)
    }

    fn check_guard(&self, x: &Vector) -> Result<(), PlantError> {
        check_finite_state(x)
    }

    fn tracked_names(&self) -> Vec<String> {
        vec!["e1".into(), "e2".into()]
    }

    fn tracked(&self, t: f64, x: &Vector) -> Vec<f64> {
        let qd = self.target.at(t).0;
        vec![x[0] - qd, x[2] - qd]
    }

    fn default_bands(&self) -> Vec<f64> {
        vec![0.1 * self.target.amplitude; 2]
    }

    fn within_declared_bounds(&self) -> bool {
        self.ranges.contains(&self.truth)
    }

    fn uncertainty_box(&self) -> Vec<(String, f64, f64)> {
        ManipulatorRanges::NAMES
            .iter()
            .zip(self.ranges.as_array())
            .map(|(n, r)| (n.to_string(), r[0], r[1]))
            .collect()
    }

    fn true_uncertain_values(&self) -> Vec<f64> {
        self.truth.as_array().to_vec()
    }

    fn grid_dim(&self) -> usize {
        2
    }

    fn gain_at(&self, uncertain: &[f64], grid_point: &[f64]) -> Result<Matrix, PlantError> {
        let p = ManipulatorParams::from_slice(uncertain);
        let x = Vector::from_vec(vec![grid_point[0], 0.0, grid_point[1], 0.0]);
        Ok(closed_form(&x, &p, self.g)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const CASE1: ManipulatorParams = ManipulatorParams {
        m1: 0.7,
        m2: 0.8,
        l1: 1.3,
        l2: 1.3,
    };

    #[test]
    fn equilibrium_at_upright() {
        let d = manipulator_dynamics(&Vector::zeros(4), &Vector::zeros(2), &CASE1, GRAVITY)
            .unwrap();
        assert_eq!(d, Vector::zeros(4));
    }

    #[test]
    fn target_values() {
        let (q, qd, qdd) = target_trajectory(0.0);
        assert_relative_eq!(q, 0.01, epsilon = 1e-15);
        assert!(qd.abs() < 1e-15);
        assert_relative_eq!(qdd, -0.25, epsilon = 1e-15);
        assert!(target_trajectory(PI / 10.0).0.abs() < 1e-15);
        for i in 0..200 {
            let (q, _, qdd) = target_trajectory(i as f64 * 0.05);
            assert_relative_eq!(qdd, -25.0 * q, epsilon = 1e-15);
        }
    }

    #[test]
    fn denominator_bounded_below_by_m1() {
        for i in -40..=40 {
            for j in -40..=40 {
                let (q1, q2) = (i as f64 * PI / 40.0, j as f64 * PI / 40.0);
                assert!(inertia_denominator(&CASE1, q1, q2) >= CASE1.m1 - 1e-12);
            }
        }
    }

    #[test]
    fn sliding_zero_on_target() {
        let (qd, qdv, qda) = target_trajectory(0.3);
        let x = Vector::from_vec(vec![qd, qdv, qd, qdv]);
        let t = manipulator_sliding(&x, (qd, qdv, qda), 5.0, &CASE1, GRAVITY).unwrap();
        assert_eq!(t.s, Vector::zeros(2));
    }

    #[test]
    fn midpoint_nominal() {
        let p = ManipulatorRanges::BENCHMARK.midpoint();
        assert_relative_eq!(p.m1, 0.9);
        assert_relative_eq!(p.m2, 1.1);
        assert_relative_eq!(p.l1, 1.1);
        assert_relative_eq!(p.l2, 1.05);
    }

    #[test]
    fn degenerate_inertia_reported() {
        let p = ManipulatorParams {
            m1: 0.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
        };
        assert!(matches!(
            closed_form(&Vector::zeros(4), &p, GRAVITY),
            Err(PlantError::DegenerateInertia { .. })
        ));
    }
}
