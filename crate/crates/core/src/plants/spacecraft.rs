//! Planar liquid-filled spacecraft with a pendulum fuel-slosh model.
//!
//! State layout: `[v_z, θ, θ̇, ψ, ψ̇, v_x, ∫θ, ∫ψ]`, control `u = [f, M_pitch]`.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_finite_state, Plant, PlantError, SlidingTerms};
use crate::sign::{lu_inverse, lu_solve, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftParams {
    pub m: f64,
    pub m_f: f64,
    pub inertia: f64,
    pub inertia_f: f64,
    pub a: f64,
    pub b: f64,
    pub thrust: f64,
    pub epsilon: f64,
}

impl SpacecraftParams {
    pub const NOMINAL: SpacecraftParams = SpacecraftParams {
        m: 600.0,
        m_f: 1000.0,
        inertia: 720.0,
        inertia_f: 90.0,
        a: 0.32,
        b: 0.25,
        thrust: 1000.0,
        epsilon: 0.0019,
    };

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("plant.nominal.m", self.m),
            ("plant.nominal.m_f", self.m_f),
            ("plant.nominal.inertia", self.inertia),
            ("plant.nominal.inertia_f", self.inertia_f),
            ("plant.nominal.a", self.a),
            ("plant.nominal.b", self.b),
            ("plant.nominal.thrust", self.thrust),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::invalid(field, format!("must be > 0, got {v}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(PlantError::invalid("plant.nominal.epsilon", "must be >= 0"));
        }
        Ok(())
    }
}

/// Relative bounds on the basic uncertainties; `I` and `b` are certain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftBounds {
    pub m: f64,
    pub m_f: f64,
    pub inertia_f: f64,
    pub a: f64,
    pub epsilon: f64,
}

impl SpacecraftBounds {
    pub const BENCHMARK: SpacecraftBounds = SpacecraftBounds {
        m: 0.1,
        m_f: 0.1,
        inertia_f: 0.05,
        a: 0.05,
        epsilon: 0.03,
    };

    pub const ZERO: SpacecraftBounds = SpacecraftBounds {
        m: 0.0,
        m_f: 0.0,
        inertia_f: 0.0,
        a: 0.0,
        epsilon: 0.0,
    };

    pub const NAMES: [&'static str; 5] = ["m", "m_f", "inertia_f", "a", "epsilon"];

    pub fn as_array(&self) -> [f64; 5] {
        [self.m, self.m_f, self.inertia_f, self.a, self.epsilon]
    }
}

fn uncertain_nominals(p: &SpacecraftParams) -> [f64; 5] {
    [p.m, p.m_f, p.inertia_f, p.a, p.epsilon]
}

fn with_uncertain(p: &SpacecraftParams, v: &[f64]) -> SpacecraftParams {
    SpacecraftParams {
        m: v[0],
        m_f: v[1],
        inertia_f: v[2],
        a: v[3],
        epsilon: v[4],
        ..*p
    }
}

fn check_scale(bounds: &SpacecraftBounds, k: f64) -> Result<(), PlantError> {
    if !(k.is_finite() && k >= 1.0) {
        return Err(PlantError::invalid("plant.k", format!("must be >= 1, got {k}")));
    }
    for (name, b) in SpacecraftBounds::NAMES.iter().zip(bounds.as_array()) {
        if !(b.is_finite() && (0.0..1.0).contains(&b)) {
            return Err(PlantError::invalid("plant.bounds", format!("{name} must lie in [0, 1)")));
        }
        if k * b >= 1.0 {
            return Err(PlantError::InfeasibleScale {
                param: name,
                k,
                bound: b,
            });
        }
    }
    Ok(())
}

/// Intervals `p (1 ± k·bound)` for the uncertain parameters.
pub fn parameter_box(
    nominal: &SpacecraftParams,
    bounds: &SpacecraftBounds,
    k: f64,
) -> Result<Vec<(f64, f64)>, PlantError> {
    check_scale(bounds, k)?;
    Ok(uncertain_nominals(nominal)
        .iter()
        .zip(bounds.as_array())
        .map(|(p, b)| (p * (1.0 - k * b), p * (1.0 + k * b)))
        .collect())
}

/// True parameters `p* = p (1 + k Δp)`, `Δp ~ U[−bound, bound]`.
pub fn sample_spacecraft_params(
    nominal: &SpacecraftParams,
    bounds: &SpacecraftBounds,
    k: f64,
    seed: u64,
) -> Result<SpacecraftParams, PlantError> {
    check_scale(bounds, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = uncertain_nominals(nominal)
        .iter()
        .zip(bounds.as_array())
        .map(|(p, b)| {
            let delta = if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 };
            p * (1.0 + k * delta)
        })
        .collect();
    Ok(with_uncertain(nominal, &values))
}

/// Mass matrix `N(ψ)`.
pub fn mass_matrix(p: &SpacecraftParams, psi: f64) -> Matrix {
    let c = psi.cos();
    let fa = p.m_f * p.a * c;
    let jf = p.inertia_f + p.m_f * p.a * p.a;
    Matrix::from_row_slice(
        3,
        3,
        &[
            p.m + p.m_f,
            fa + p.m * p.b,
            fa,
            p.m * p.b,
            p.inertia + p.m * p.b * p.b,
            0.0,
            fa,
            jf,
            jf,
        ],
    )
}

/// State-dependent generalized forces `G_x`.
pub fn state_forces(p: &SpacecraftParams, x: &Vector) -> Vector {
    let (theta_dot, psi, psi_dot, v_x) = (x[2], x[3], x[4], x[5]);
    let total = p.m + p.m_f;
    Vector::from_vec(vec![
        total * theta_dot * v_x + p.m_f * p.a * (theta_dot + psi_dot).powi(2) * psi.sin(),
        p.m * p.b * theta_dot * v_x,
        -p.epsilon * psi_dot - p.m_f * p.a * p.thrust / total * psi.sin()
            + p.m_f * p.a * theta_dot * v_x * psi.cos(),
    ])
}

/// Input map `G_u`.
pub fn input_matrix(p: &SpacecraftParams) -> Matrix {
    Matrix::from_row_slice(3, 2, &[1.0, 0.0, p.b, 1.0, 0.0, 0.0])
}

/// `[v̇_z, θ̈, ψ̈] = N⁻¹ (G_x + G_u u)`.
pub fn accelerations(p: &SpacecraftParams, x: &Vector, u: &Vector) -> Result<Vector, PlantError> {
    let rhs = state_forces(p, x) + input_matrix(p) * u;
    lu_solve(&mass_matrix(p, x[3]), &rhs).ok_or(PlantError::SingularMassMatrix { psi: x[3] })
}

/// Drift accelerations `N⁻¹ G_x` and input gain `N⁻¹ G_u`.
fn affine_parts(p: &SpacecraftParams, x: &Vector) -> Result<(Vector, Matrix), PlantError> {
    let n_inv = lu_inverse(&mass_matrix(p, x[3])).ok_or(PlantError::SingularMassMatrix { psi: x[3] })?;
    Ok((&n_inv * state_forces(p, x), n_inv * input_matrix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VxMode {
    /// `v̇_x = F / (m* + m_f*)`.
    Thrust,
    Constant,
}

pub fn spacecraft_dynamics(
    x: &Vector,
    u: &Vector,
    p: &SpacecraftParams,
    vx_mode: VxMode,
) -> Result<Vector, PlantError> {
    let acc = accelerations(p, x, u)?;
    let vx_dot = match vx_mode {
        VxMode::Thrust => p.thrust / (p.m + p.m_f),
        VxMode::Constant => 0.0,
    };
    Ok(Vector::from_vec(vec![
        acc[0], x[2], acc[1], x[4], acc[2], vx_dot, x[1], x[3],
    ]))
}

/// `s = ė + λ1 e + λ2 ∫e` with `e = [θ, ψ]`, and `ṡ = f + G u` under `p`.
pub fn spacecraft_sliding(
    x: &Vector,
    lambda1: f64,
    lambda2: f64,
    p: &SpacecraftParams,
) -> Result<SlidingTerms, PlantError> {
    let (theta, theta_dot, psi, psi_dot) = (x[1], x[2], x[3], x[4]);
    let s = Vector::from_vec(vec![
        theta_dot + lambda1 * theta + lambda2 * x[6],
        psi_dot + lambda1 * psi + lambda2 * x[7],
    ]);
    let (drift, gain) = affine_parts(p, x)?;
    let f = Vector::from_vec(vec![
        drift[1] + lambda1 * theta_dot + lambda2 * theta,
        drift[2] + lambda1 * psi_dot + lambda2 * psi,
    ]);
    let g = gain.rows(1, 2).into_owned();
    Ok(SlidingTerms { s, f, g })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftInitial {
    pub v_z: f64,
    pub theta_deg: f64,
    pub theta_dot_deg: f64,
    pub psi_deg: f64,
    pub psi_dot_deg: f64,
    pub v_x: f64,
}

impl SpacecraftInitial {
    pub const BENCHMARK: SpacecraftInitial = SpacecraftInitial {
        v_z: 105.0,
        theta_deg: 2.0,
        theta_dot_deg: 0.57,
        psi_deg: 5.0,
        psi_dot_deg: 0.5,
        v_x: 3000.0,
    };

    pub fn to_state(&self) -> Vector {
        Vector::from_vec(vec![
            self.v_z,
            self.theta_deg.to_radians(),
            self.theta_dot_deg.to_radians(),
            self.psi_deg.to_radians(),
            self.psi_dot_deg.to_radians(),
            self.v_x,
            0.0,
            0.0,
        ])
    }
}

fn default_vx_mode() -> VxMode {
    VxMode::Thrust
}

/// `plant` block of an experiment config with `kind = "spacecraft"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftSpec {
    pub kind: String,
    #[serde(default)]
    pub comment: Option<String>,
    pub nominal: SpacecraftParams,
    pub bounds: SpacecraftBounds,
    pub k: f64,
    pub initial: SpacecraftInitial,
    #[serde(default = "default_vx_mode")]
    pub vx_mode: VxMode,
    /// Explicit true parameters; drawn from the box by seed when absent.
    #[serde(default)]
    pub true_params: Option<SpacecraftParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpacecraftSliding {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone)]
pub struct Spacecraft {
    pub nominal: SpacecraftParams,
    pub truth: SpacecraftParams,
    pub bounds: SpacecraftBounds,
    pub k: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub vx_mode: VxMode,
    pub initial: Vector,
}

impl Spacecraft {
    pub fn from_spec(
        spec: &SpacecraftSpec,
        sliding: &SpacecraftSliding,
        seed: u64,
    ) -> Result<Self, PlantError> {
        spec.nominal.validate()?;
        check_scale(&spec.bounds, spec.k)?;
        for (field, v) in [
            ("sliding.lambda1", sliding.lambda1),
            ("sliding.lambda2", sliding.lambda2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::invalid(field, format!("must be > 0, got {v}")));
            }
        }
        let truth = match spec.true_params {
            Some(p) => p,
            None => sample_spacecraft_params(&spec.nominal, &spec.bounds, spec.k, seed)?,
        };
        let initial = spec.initial.to_state();
        if initial[3].abs() >= FRAC_PI_2 {
            return Err(PlantError::invalid("plant.initial.psi_deg", "must satisfy |psi| < 90"));
        }
        Ok(Self {
            nominal: spec.nominal,
            truth,
            bounds: spec.bounds,
            k: spec.k,
            lambda1: sliding.lambda1,
            lambda2: sliding.lambda2,
            vx_mode: spec.vx_mode,
            initial,
        })
    }
}

const STATE_NAMES: [&str; 8] = [
    "v_z",
    "theta",
    "theta_dot",
    "psi",
    "psi_dot",
    "v_x",
    "int_theta",
    "int_psi",
];

impl Plant for Spacecraft {
    fn kind(&self) -> &'static str {
        "spacecraft"
    }

    fn state_names(&self) -> Vec<String> {
        STATE_NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn initial_state(&self) -> Vector {
        self.initial.clone()
    }

    fn derivative(&self, _t: f64, x: &Vector, u: &Vector) -> Result<Vector, PlantError> {
        spacecraft_dynamics(x, u, &self.truth, self.vx_mode)
    }

    fn sliding(&self, _t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        spacecraft_sliding(x, self.lambda1, self.lambda2, &self.nominal)
    }

    fn true_sliding(&self, _t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        spacecraft_sliding(x, self.lambda1, self.lambda2, &self.truth)
    }

    fn check_guard(&self, x: &Vector) -> Result<(), PlantError> {
        check_finite_state(x)?;
        if x[3].abs() >= FRAC_PI_2 {
            return Err(PlantError::GuardViolation {
                what: "|psi| < pi/2",
                value: x[3],
            });
        }
        Ok(())
    }

    fn tracked_names(&self) -> Vec<String> {
        vec!["v_z".into(), "theta".into(), "psi".into()]
    }

    fn tracked(&self, _t: f64, x: &Vector) -> Vec<f64> {
        vec![x[0], x[1], x[3]]
    }

    fn default_bands(&self) -> Vec<f64> {
        vec![1.0, 0.1f64.to_radians(), 0.1f64.to_radians()]
    }

    fn within_declared_bounds(&self) -> bool {
        let Ok(bx) = parameter_box(&self.nominal, &self.bounds, self.k) else {
            return false;
        };
        let certain = self.truth.inertia == self.nominal.inertia
            && self.truth.b == self.nominal.b
            && self.truth.thrust == self.nominal.thrust;
        certain
            && uncertain_nominals(&self.truth)
                .iter()
                .zip(&bx)
                .all(|(v, (lo, hi))| lo - 1e-12 * lo.abs() <= *v && *v <= hi + 1e-12 * hi.abs())
    }

    fn uncertainty_box(&self) -> Vec<(String, f64, f64)> {
        let bx = parameter_box(&self.nominal, &self.bounds, self.k).unwrap_or_default();
        SpacecraftBounds::NAMES
            .iter()
            .zip(bx)
            .map(|(n, (lo, hi))| (n.to_string(), lo, hi))
            .collect()
    }

    fn true_uncertain_values(&self) -> Vec<f64> {
        uncertain_nominals(&self.truth).to_vec()
    }

    fn grid_dim(&self) -> usize {
        1
    }

    fn gain_at(&self, uncertain: &[f64], grid_point: &[f64]) -> Result<Matrix, PlantError> {
        let p = with_uncertain(&self.nominal, uncertain);
        let mut x = Vector::zeros(8);
        x[3] = grid_point[0];
        Ok(affine_parts(&p, &x)?.1.rows(1, 2).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sign::condition_number;
    use approx::assert_relative_eq;

    fn benchmark_plant(k: f64, seed: u64) -> Spacecraft {
        let spec = SpacecraftSpec {
            kind: "spacecraft".into(),
            comment: None,
            nominal: SpacecraftParams::NOMINAL,
            bounds: SpacecraftBounds::BENCHMARK,
            k,
            initial: SpacecraftInitial::BENCHMARK,
            vx_mode: VxMode::Thrust,
            true_params: None,
        };
        let sliding = SpacecraftSliding {
            lambda1: 50.0,
            lambda2: 125.0,
        };
        Spacecraft::from_spec(&spec, &sliding, seed).unwrap()
    }

    #[test]
    fn zero_bounds_reproduce_nominal() {
        let p = sample_spacecraft_params(
            &SpacecraftParams::NOMINAL,
            &SpacecraftBounds::ZERO,
            1.0,
            9,
        )
        .unwrap();
        assert_eq!(p, SpacecraftParams::NOMINAL);
    }

    #[test]
    fn k7_mass_interval_and_coverage() {
        let nominal = SpacecraftParams::NOMINAL;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for seed in 0..10_000 {
            let p = sample_spacecraft_params(&nominal, &SpacecraftBounds::BENCHMARK, 7.0, seed)
                .unwrap();
            assert!((600.0 * 0.3..=600.0 * 1.7).contains(&p.m));
            lo = lo.min(p.m);
            hi = hi.max(p.m);
            assert_eq!(p.inertia, nominal.inertia);
            assert_eq!(p.b, nominal.b);
        }
        assert!((hi - lo) / (600.0 * 1.4) > 0.99);
    }

    #[test]
    fn infeasible_scale_is_rejected() {
        let err = sample_spacecraft_params(
            &SpacecraftParams::NOMINAL,
            &SpacecraftBounds::BENCHMARK,
            10.0,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, PlantError::InfeasibleScale { param: "m", .. }));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let a = sample_spacecraft_params(&SpacecraftParams::NOMINAL, &SpacecraftBounds::BENCHMARK, 7.0, 4);
        let b = sample_spacecraft_params(&SpacecraftParams::NOMINAL, &SpacecraftBounds::BENCHMARK, 7.0, 4);
        assert_eq!(a, b);
    }

    #[test]
    fn equilibrium_has_zero_acceleration() {
        let mut x = Vector::zeros(8);
        x[0] = 12.0;
        x[1] = 0.3;
        x[5] = 3000.0;
        let acc = accelerations(&SpacecraftParams::NOMINAL, &x, &Vector::zeros(2)).unwrap();
        assert_eq!(acc, Vector::zeros(3));
    }

    #[test]
    fn benchmark_initial_condition_is_regular() {
        let x = SpacecraftInitial::BENCHMARK.to_state();
        let n = mass_matrix(&SpacecraftParams::NOMINAL, x[3]);
        assert!(condition_number(&n) < 1e6);
        let d = spacecraft_dynamics(&x, &Vector::zeros(2), &SpacecraftParams::NOMINAL, VxMode::Thrust)
            .unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
        assert_relative_eq!(d[5], 1000.0 / 1600.0);
    }

    #[test]
    fn mass_matrix_regular_over_k7_box() {
        let bx = parameter_box(&SpacecraftParams::NOMINAL, &SpacecraftBounds::BENCHMARK, 7.0).unwrap();
        for corner in 0..32u32 {
            let v: Vec<f64> = bx
                .iter()
                .enumerate()
                .map(|(i, (lo, hi))| if corner >> i & 1 == 1 { *hi } else { *lo })
                .collect();
            let p = with_uncertain(&SpacecraftParams::NOMINAL, &v);
            for step in -30..=30 {
                let n = mass_matrix(&p, (step as f64).to_radians());
                assert!(condition_number(&n) < 1e6);
            }
        }
    }

    #[test]
    fn sliding_at_origin_is_zero() {
        let t = spacecraft_sliding(&Vector::zeros(8), 50.0, 125.0, &SpacecraftParams::NOMINAL)
            .unwrap();
        assert_eq!(t.s, Vector::zeros(2));
    }

    #[test]
    fn sliding_at_benchmark_initial_condition() {
        let plant = benchmark_plant(1.0, 0);
        let t = plant.sliding(0.0, &plant.initial_state()).unwrap();
        assert!(t.s.iter().all(|v| v.is_finite() && *v != 0.0));
        let expect = 0.57f64.to_radians() + 50.0 * 2f64.to_radians();
        assert_relative_eq!(t.s[0], expect, max_relative = 1e-14);
    }

    #[test]
    fn nominal_and_true_terms_agree_without_uncertainty() {
        let mut plant = benchmark_plant(1.0, 0);
        plant.truth = plant.nominal;
        let x = plant.initial_state();
        assert_eq!(plant.sliding(0.0, &x).unwrap(), plant.true_sliding(0.0, &x).unwrap());
    }

    #[test]
    fn sampled_truth_is_within_declared_box() {
        for seed in 0..20 {
            assert!(benchmark_plant(7.0, seed).within_declared_bounds());
        }
        let mut plant = benchmark_plant(1.0, 0);
        plant.truth.m = 700.0;
        assert!(!plant.within_declared_bounds());
    }

    #[test]
    fn guard_rejects_large_slosh_angle() {
        let plant = benchmark_plant(1.0, 0);
        let mut x = plant.initial_state();
        x[3] = 1.6;
        assert!(matches!(plant.check_guard(&x), Err(PlantError::GuardViolation { .. })));
    }

    #[test]
    fn gain_at_matches_sliding_gain() {
        let plant = benchmark_plant(1.0, 0);
        let mut x = Vector::zeros(8);
        x[3] = 0.1;
        let g = plant
            .gain_at(&uncertain_nominals(&plant.nominal), &[0.1])
            .unwrap();
        assert_eq!(g, plant.sliding(0.0, &x).unwrap().g);
    }
}
