//! Sliding-mode control law for an uncertain, non-positive-definite gain.
//!
//! The gain is factored as `G0 = M Q` and the normalized uncertainty
//! `F = M⁻¹ ΔG Q⁻¹` is bounded element-wise by `F̄`. Each step forms the
//! reaching term `u_c = −M⁻¹(f0 + S(s)(f̄ + η̄) + ρ s)`, solves
//! `û + S(v) F̄ |û| = u_c` with `v = Mᵀ s`, and returns `u = Q⁻¹ û`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::cone::{solve_control_equation, SolveError, SolveInstance, SolveResult};
use crate::registry::Registry;
use crate::sign::{
    induced_norm, is_finite_matrix, is_finite_vector, lu_inverse, matrix_max_abs,
    matrix_to_rows, sign, vector_inf_norm, Matrix, NormKind, Vector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("decomposition factor {0} is singular")]
    SingularDecomposition(&'static str),
    #[error("F̄ has a negative entry {value} at ({row}, {col})")]
    NegativeEntries { row: usize, col: usize, value: f64 },
    #[error("F̄ is not admissible: no induced norm below one ({norms:?})")]
    AdmissibilityViolation { norms: BTreeMap<String, f64> },
    #[error("{field}: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error(transparent)]
    Solver(#[from] SolveError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ControllerError {
    ControllerError::InvalidParameter {
        field,
        reason: reason.into(),
    }
}

/// Scalar switching function `x -> [-1, 1]` with a width parameter.
pub trait SwitchingFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, x: f64, delta: f64) -> f64;
}

struct ExactSign;

impl SwitchingFunction for ExactSign {
    fn name(&self) -> &'static str {
        "sign"
    }

    fn eval(&self, x: f64, _delta: f64) -> f64 {
        sign(x)
    }
}

struct Saturation;

impl SwitchingFunction for Saturation {
    fn name(&self) -> &'static str {
        "saturation"
    }

    fn eval(&self, x: f64, delta: f64) -> f64 {
        smooth_sign(x, delta)
    }
}

pub fn switching_registry() -> &'static Registry<&'static dyn SwitchingFunction> {
    static REG: OnceLock<Registry<&'static dyn SwitchingFunction>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("switching function")
            .with("sign", &ExactSign as &'static dyn SwitchingFunction)
            .with("saturation", &Saturation)
    })
}

/// Boundary-layer sign: `sign(x)` outside `|x| < δ`, linear ramp inside.
/// `δ = 0` is the exact sign.
pub fn smooth_sign(value: f64, delta: f64) -> f64 {
    if value.abs() >= delta {
        sign(value)
    } else {
        value / delta
    }
}

/// `G0 = M Q` together with the element-wise uncertainty bound `F̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDecomposition {
    m: Matrix,
    q: Matrix,
    f_bar: Matrix,
    m_inv: Matrix,
    q_inv: Matrix,
    admissibility: AdmissibilityReport,
}

impl GainDecomposition {
    pub fn new(m: Matrix, q: Matrix, f_bar: Matrix) -> Result<Self, ControllerError> {
        let n = m.nrows();
        for (name, a) in [("M", &m), ("Q", &q), ("F_bar", &f_bar)] {
            if a.nrows() != n || a.ncols() != n || n == 0 {
                return Err(invalid("decomposition", format!("{name} must be {n}x{n}")));
            }
            if !is_finite_matrix(a) {
                return Err(invalid("decomposition", format!("{name} has non-finite entries")));
            }
        }
        let m_inv = lu_inverse(&m).ok_or(ControllerError::SingularDecomposition("M"))?;
        let q_inv = lu_inverse(&q).ok_or(ControllerError::SingularDecomposition("Q"))?;
        let admissibility = check_admissibility(&f_bar)?;
        Ok(Self {
            m,
            q,
            f_bar,
            m_inv,
            q_inv,
            admissibility,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn m(&self) -> &Matrix {
        &self.m
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn f_bar(&self) -> &Matrix {
        &self.f_bar
    }

    pub fn m_inv(&self) -> &Matrix {
        &self.m_inv
    }

    pub fn q_inv(&self) -> &Matrix {
        &self.q_inv
    }

    /// `G0 = M Q`.
    pub fn g0(&self) -> Matrix {
        &self.m * &self.q
    }

    pub fn norms(&self) -> &BTreeMap<String, f64> {
        &self.admissibility.by_norm
    }

    pub fn admissibility(&self) -> &AdmissibilityReport {
        &self.admissibility
    }

    pub fn is_admissible(&self) -> bool {
        self.admissibility.admissible
    }
}

impl Serialize for GainDecomposition {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            m: Vec<Vec<f64>>,
            q: Vec<Vec<f64>>,
            f_bar: Vec<Vec<f64>>,
            norms: &'a BTreeMap<String, f64>,
        }
        Repr {
            m: matrix_to_rows(&self.m),
            q: matrix_to_rows(&self.q),
            f_bar: matrix_to_rows(&self.f_bar),
            norms: self.norms(),
        }
        .serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    pub by_norm: BTreeMap<String, f64>,
    pub symmetric: bool,
    /// The element-wise condition `max F̄_ij < 1/m`.
    pub remark2_comparison: bool,
}

pub fn check_admissibility(f_bar: &Matrix) -> Result<AdmissibilityReport, ControllerError> {
    if let Some((idx, &value)) = f_bar.iter().enumerate().find(|(_, &x)| x < 0.0) {
        let (row, col) = (idx % f_bar.nrows(), idx / f_bar.nrows());
        return Err(ControllerError::NegativeEntries { row, col, value });
    }
    let mut by_norm = BTreeMap::new();
    for kind in NormKind::ALL {
        let value = induced_norm(f_bar, kind)
            .map_err(|e| invalid("decomposition.f_bar", e.to_string()))?;
        by_norm.insert(kind.name().to_string(), value);
    }
    let m = f_bar.nrows() as f64;
    Ok(AdmissibilityReport {
        admissible: by_norm.values().any(|&v| v < 1.0),
        symmetric: f_bar == &f_bar.transpose(),
        remark2_comparison: matrix_max_abs(f_bar) < 1.0 / m,
        by_norm,
    })
}

/// The element-wise condition on `|ΔG G0⁻¹|` used by earlier adaptive schemes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementwiseConditionReport {
    pub ubm: Vec<Vec<f64>>,
    pub max_element: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

/// Element-wise max of `|(G − G0) G0⁻¹|` over `gains`, checked against `1/m`.
pub fn elementwise_condition(
    g0: &Matrix,
    gains: &[Matrix],
) -> Result<ElementwiseConditionReport, ControllerError> {
    let g0_inv = lu_inverse(g0).ok_or(ControllerError::SingularDecomposition("G0"))?;
    let mut ubm = Matrix::zeros(g0.nrows(), g0.ncols());
    for g in gains {
        let e = ((g - g0) * &g0_inv).abs();
        ubm = ubm.zip_map(&e, f64::max);
    }
    let max_element = matrix_max_abs(&ubm);
    let threshold = 1.0 / g0.nrows() as f64;
    Ok(ElementwiseConditionReport {
        ubm: matrix_to_rows(&ubm),
        max_element,
        threshold,
        satisfied: max_element < threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub rho: f64,
    pub f_bar: Vector,
    pub eta_bar: Vector,
    pub decomposition: GainDecomposition,
    pub delta_s: f64,
    pub delta_v: f64,
    pub smoothing: bool,
}

pub const DEFAULT_DELTA: f64 = 1e-3;

impl ControllerConfig {
    /// Config with zero `η̄` and default smoothing widths, smoothing off.
    pub fn new(
        rho: f64,
        f_bar: Vector,
        decomposition: GainDecomposition,
    ) -> Result<Self, ControllerError> {
        let m = decomposition.dim();
        let cfg = Self {
            rho,
            f_bar,
            eta_bar: Vector::zeros(m),
            decomposition,
            delta_s: DEFAULT_DELTA,
            delta_v: DEFAULT_DELTA,
            smoothing: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_smoothing(mut self, on: bool) -> Self {
        self.smoothing = on;
        self
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let m = self.decomposition.dim();
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(invalid("controller.rho", format!("must be > 0, got {}", self.rho)));
        }
        for (field, v) in [
            ("controller.f_bar", &self.f_bar),
            ("controller.eta_bar", &self.eta_bar),
        ] {
            if v.len() != m {
                return Err(invalid(field, format!("must have length {m}")));
            }
            if !is_finite_vector(v) || v.iter().any(|&x| x < 0.0) {
                return Err(invalid(field, "entries must be finite and >= 0"));
            }
        }
        for (field, d) in [
            ("controller.delta_s", self.delta_s),
            ("controller.delta_v", self.delta_v),
        ] {
            if !(d.is_finite() && d >= 0.0) {
                return Err(invalid(field, format!("must be >= 0, got {d}")));
            }
        }
        Ok(())
    }

    pub fn switching(&self) -> &'static dyn SwitchingFunction {
        let name = if self.smoothing { "saturation" } else { "sign" };
        *switching_registry()
            .get(name)
            .expect("built-in switching functions are registered")
    }

    fn switch_vec(&self, x: &Vector, delta: f64) -> Vector {
        let sw = self.switching();
        x.map(|xi| sw.eval(xi, delta))
    }
}

/// `u_c = −M⁻¹(f0 + S̃(s)(f̄ + η̄) + ρ s)`.
pub fn reaching_term(
    f0: &Vector,
    s: &Vector,
    cfg: &ControllerConfig,
) -> Result<Vector, ControllerError> {
    let m = cfg.decomposition.dim();
    if f0.len() != m || s.len() != m {
        return Err(invalid("reaching_term", format!("f0 and s must have length {m}")));
    }
    let switched = cfg.switch_vec(s, cfg.delta_s);
    let bound = (&cfg.f_bar + &cfg.eta_bar).component_mul(&switched);
    let rhs = f0 + bound + cfg.rho * s;
    Ok(-(cfg.decomposition.m_inv() * rhs))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlOutput {
    pub u: Vector,
    pub u_hat: Vector,
    pub u_c: Vector,
    pub v: Vector,
    pub solver: SolveResult,
    /// `‖Q u − û‖∞`.
    pub inverse_residual: f64,
}

pub fn compute_control(
    f0: &Vector,
    s: &Vector,
    cfg: &ControllerConfig,
) -> Result<ControlOutput, ControllerError> {
    let dec = &cfg.decomposition;
    if !dec.is_admissible() {
        return Err(ControllerError::AdmissibilityViolation {
            norms: dec.norms().clone(),
        });
    }
    let u_c = reaching_term(f0, s, cfg)?;
    let v = dec.m().transpose() * s;
    let scale = cfg.switch_vec(&v, cfg.delta_v);
    let h = Matrix::from_diagonal(&scale) * dec.f_bar();
    let solver = solve_control_equation(&SolveInstance::new(h, u_c.clone())?)?;
    let u = dec.q_inv() * &solver.u_hat;
    let inverse_residual = vector_inf_norm(&(dec.q() * &u - &solver.u_hat));
    Ok(ControlOutput {
        u,
        u_hat: solver.u_hat.clone(),
        u_c,
        v,
        solver,
        inverse_residual,
    })
}
