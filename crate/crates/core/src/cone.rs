//! Solver for the piecewise-linear control equation
//!
//! ```text
//! û + S(v) F̄ |û| = u_c
//! ```
//!
//! Writing `û = S p` with `p = |û|` and `H = S(v) F̄` turns it into the pair
//! problem `(S + H) p = u_c`, `p >= 0`. Each sign pattern `S_i` spans a
//! closed convex cone `C_i = {(S_i + H) p : p >= 0}`; when some induced norm
//! of `H` is below one the cones tile the whole space with disjoint interiors,
//! so enumerating patterns until one yields a nonnegative `p` finds the unique
//! solution.

use serde::Serialize;
use thiserror::Error;

use crate::sign::{
    enumerate_sign_patterns, induced_norm, is_finite_matrix, is_finite_vector, lu_solve,
    sign_matrix, vector_inf_norm, AlgebraError, Matrix, NormKind, SignPattern, Vector, MAX_DIM,
};

/// Relative zero tolerance for magnitudes; scaled by `1 + ‖u_c‖∞`.
pub const ZERO_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("no sign pattern produced a nonnegative solution after {patterns_tried} patterns")]
    NoSolution { patterns_tried: usize },
    #[error("S + H is singular to working precision for pattern {pattern}")]
    SingularSystem { pattern: SignPattern },
    #[error("H is not admissible: one={one:.6}, two={two:.6}, infinity={infinity:.6} (need some < 1)")]
    Inadmissible { one: f64, two: f64, infinity: f64 },
    #[error("eigenvalue {lambda} has magnitude below one")]
    EigenvalueTooSmall { lambda: f64 },
    #[error("eigenvector for eigenvalue {lambda} has no nonnegative representative")]
    NoNonnegativeEigenvector { lambda: f64 },
    #[error("F̄ must be symmetric")]
    NotSymmetric,
    #[error("eigenvalue index {index} out of range for dimension {dim}")]
    EigenIndex { index: usize, dim: usize },
    #[error("H is {rows}x{cols} but u_c has length {len}")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry in input")]
    NonFinite,
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// `(H, u_c)` for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveInstance {
    h: Matrix,
    uc: Vector,
}

impl SolveInstance {
    pub fn new(h: Matrix, uc: Vector) -> Result<Self, SolveError> {
        if h.nrows() != h.ncols() || h.nrows() != uc.len() {
            return Err(SolveError::Shape {
                rows: h.nrows(),
                cols: h.ncols(),
                len: uc.len(),
            });
        }
        if uc.is_empty() || uc.len() > MAX_DIM {
            return Err(AlgebraError::DimensionOutOfRange(uc.len()).into());
        }
        if !is_finite_matrix(&h) || !is_finite_vector(&uc) {
            return Err(SolveError::NonFinite);
        }
        Ok(Self { h, uc })
    }

    /// Instance with `H = S(v) F̄`.
    pub fn from_sign_and_bound(
        v_signs: SignPattern,
        f_bar: &Matrix,
        uc: Vector,
    ) -> Result<Self, SolveError> {
        Self::new(v_signs.apply_rows(f_bar), uc)
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn uc(&self) -> &Vector {
        &self.uc
    }

    pub fn dim(&self) -> usize {
        self.uc.len()
    }

    pub fn zero_tolerance(&self) -> f64 {
        ZERO_RTOL * (1.0 + vector_inf_norm(&self.uc))
    }

    /// Smallest of the one, two and infinity norms of `H`.
    pub fn admissibility_margin(&self) -> Result<f64, SolveError> {
        let (one, two, inf) = self.norms()?;
        Ok(one.min(two).min(inf))
    }

    fn norms(&self) -> Result<(f64, f64, f64), SolveError> {
        Ok((
            induced_norm(&self.h, NormKind::One)?,
            induced_norm(&self.h, NormKind::Two)?,
            induced_norm(&self.h, NormKind::Infinity)?,
        ))
    }

    pub fn check_admissible(&self) -> Result<(), SolveError> {
        let (one, two, infinity) = self.norms()?;
        if one < 1.0 || two < 1.0 || infinity < 1.0 {
            Ok(())
        } else {
            Err(SolveError::Inadmissible { one, two, infinity })
        }
    }

    /// `‖(S + H) p − u_c‖∞`.
    pub fn residual(&self, pattern: SignPattern, magnitudes: &Vector) -> f64 {
        let lhs = pattern.apply(magnitudes) + &self.h * magnitudes;
        vector_inf_norm(&(lhs - &self.uc))
    }

    /// Residual of the original form `û + H |û| − u_c`.
    pub fn control_residual(&self, u_hat: &Vector) -> f64 {
        let lhs = u_hat + &self.h * u_hat.abs();
        vector_inf_norm(&(lhs - &self.uc))
    }

    fn solve_pattern(&self, pattern: SignPattern) -> Option<Vector> {
        let d = pattern.to_matrix() + &self.h;
        lu_solve(&d, &self.uc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub u_hat: Vector,
    pub pattern: SignPattern,
    pub magnitudes: Vector,
    pub patterns_tried: usize,
    pub on_surface: bool,
}

/// Whether `p` is a valid magnitude vector for `pattern`.
///
/// Every entry must be nonnegative up to `eps`; entries within `eps` of zero
/// sit on a cone face and accept either sign bit.
pub fn accepts(magnitudes: &Vector, eps: f64) -> bool {
    magnitudes.iter().all(|&p| p >= -eps)
}

fn build_result(
    pattern: SignPattern,
    magnitudes: Vector,
    eps: f64,
    patterns_tried: usize,
) -> SolveResult {
    let on_surface = magnitudes.iter().any(|p| p.abs() <= eps);
    // faces carry exact zeros so û does not inherit a ±eps sign flicker
    let cleaned = magnitudes.map(|p| if p.abs() <= eps { 0.0 } else { p });
    SolveResult {
        u_hat: pattern.apply(&cleaned),
        pattern,
        magnitudes: cleaned,
        patterns_tried,
        on_surface,
    }
}

/// Enumeration order used by the solver: the warm start `sign_matrix(u_c)`
/// first, then the remaining patterns in binary-counting order.
pub fn search_order(inst: &SolveInstance) -> Result<Vec<SignPattern>, SolveError> {
    let warm = sign_matrix(inst.uc())?;
    let mut order = Vec::with_capacity(1 << inst.dim());
    order.push(warm);
    order.extend(
        enumerate_sign_patterns(inst.dim())?
            .into_iter()
            .filter(|p| *p != warm),
    );
    Ok(order)
}

/// Finds the unique `û` for an admissible instance.
pub fn solve_control_equation(inst: &SolveInstance) -> Result<SolveResult, SolveError> {
    inst.check_admissible()?;
    solve_in_order(inst, search_order(inst)?)
}

/// Same as [`solve_control_equation`] but walks the plain enumeration order
/// without the warm start.
pub fn solve_full_enumeration(inst: &SolveInstance) -> Result<SolveResult, SolveError> {
    inst.check_admissible()?;
    solve_in_order(inst, enumerate_sign_patterns(inst.dim())?)
}

fn solve_in_order(
    inst: &SolveInstance,
    order: Vec<SignPattern>,
) -> Result<SolveResult, SolveError> {
    let eps = inst.zero_tolerance();
    for (tried, pattern) in order.into_iter().enumerate() {
        let p = inst
            .solve_pattern(pattern)
            .ok_or(SolveError::SingularSystem { pattern })?;
        if accepts(&p, eps) {
            return Ok(build_result(pattern, p, eps, tried + 1));
        }
    }
    Err(SolveError::NoSolution {
        patterns_tried: 1 << inst.dim(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub pattern: SignPattern,
    pub magnitudes: Vector,
    pub u_hat: Vector,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExhaustiveReport {
    pub accepted: Vec<Candidate>,
    pub singular: Vec<SignPattern>,
}

impl ExhaustiveReport {
    /// Accepted `û` values with near-duplicates (distance <= `tol`) merged.
    pub fn distinct_solutions(&self, tol: f64) -> Vec<Vector> {
        let mut out: Vec<Vector> = Vec::new();
        for c in &self.accepted {
            if !out
                .iter()
                .any(|u| vector_inf_norm(&(u - &c.u_hat)) <= tol)
            {
                out.push(c.u_hat.clone());
            }
        }
        out
    }
}

/// Solves `(S + H) p = u_c` for every pattern and keeps those passing the
/// acceptance test. No admissibility precondition.
pub fn exhaustive_solutions(inst: &SolveInstance) -> Result<ExhaustiveReport, SolveError> {
    let eps = inst.zero_tolerance();
    let mut report = ExhaustiveReport::default();
    for pattern in enumerate_sign_patterns(inst.dim())? {
        match inst.solve_pattern(pattern) {
            None => report.singular.push(pattern),
            Some(p) if accepts(&p, eps) => {
                let r = build_result(pattern, p, eps, 0);
                report.accepted.push(Candidate {
                    pattern,
                    magnitudes: r.magnitudes,
                    u_hat: r.u_hat,
                });
            }
            Some(_) => {}
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeStatus {
    Interior,
    Surface,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeClassification {
    pub status: ConeStatus,
    pub witness: Vector,
}

/// Locates `y` relative to the cone of `pattern`: witness `p = (S + H)⁻¹ y`.
pub fn classify_cone_membership(
    pattern: SignPattern,
    h: &Matrix,
    y: &Vector,
) -> Result<ConeClassification, SolveError> {
    let d = pattern.to_matrix() + h;
    let witness = lu_solve(&d, y).ok_or(SolveError::SingularSystem { pattern })?;
    let eps = ZERO_RTOL * (1.0 + vector_inf_norm(y));
    let status = if witness.iter().all(|&p| p > eps) {
        ConeStatus::Interior
    } else if witness.iter().all(|&p| p >= -eps) {
        ConeStatus::Surface
    } else {
        ConeStatus::Outside
    };
    Ok(ConeClassification { status, witness })
}

/// Which eigenpair of F̄ to build a multi-solution instance from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenChoice {
    /// Largest eigenvalue; for nonnegative F̄ this is the Perron root with
    /// a nonnegative eigenvector.
    Dominant,
    /// Index into the eigenvalues sorted in descending order.
    Index(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct NonuniqueInstance {
    pub lambda: f64,
    pub v_signs: SignPattern,
    pub uc: Vector,
    pub solutions: [Vector; 2],
    pub residuals: [f64; 2],
}

/// Residual tolerance for the constructed solutions.
pub const CONSTRUCTION_TOL: f64 = 1e-9;

/// Builds `(S(v), u_c)` for which the control equation has two distinct
/// solutions, given a symmetric F̄ with an eigenvalue of magnitude >= 1.
pub fn construct_nonunique_instance(
    f_bar: &Matrix,
    choice: EigenChoice,
) -> Result<NonuniqueInstance, SolveError> {
    let n = f_bar.nrows();
    if n != f_bar.ncols() || n == 0 {
        return Err(SolveError::NotSymmetric);
    }
    let scale = 1.0 + crate::sign::matrix_max_abs(f_bar);
    if (f_bar - f_bar.transpose()).amax() > 1e-12 * scale {
        return Err(SolveError::NotSymmetric);
    }
    let eig = f_bar.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let idx = match choice {
        EigenChoice::Dominant => order[0],
        EigenChoice::Index(i) => *order
            .get(i)
            .ok_or(SolveError::EigenIndex { index: i, dim: n })?,
    };
    let lambda = eig.eigenvalues[idx];
    if lambda.abs() < 1.0 - 1e-12 {
        return Err(SolveError::EigenvalueTooSmall { lambda });
    }
    let y: Vector = eig.eigenvectors.column(idx).into_owned();
    let v_signs = sign_matrix(&y)?;
    let p = v_signs.apply(&y);
    let p_norm = p.norm();
    if vector_inf_norm(&(f_bar * &p - lambda * &p)) > 1e-9 * scale * p_norm.max(1.0) {
        return Err(SolveError::NoNonnegativeEigenvector { lambda });
    }

    let inst_h = v_signs.apply_rows(f_bar);
    let (uc, solutions) = if (lambda.abs() - 1.0).abs() <= 1e-12 {
        let nonzero = -lambda * v_signs.apply(&p);
        (Vector::zeros(n), [Vector::zeros(n), nonzero])
    } else {
        let sgn = lambda.signum();
        let uc = lambda * v_signs.apply(&p);
        let make = |sigma: f64| {
            let p_sigma = (lambda / (sigma * sgn + lambda)) * &p;
            sigma * sgn * v_signs.apply(&p_sigma)
        };
        (uc, [make(1.0), make(-1.0)])
    };
    let inst = SolveInstance::new(inst_h, uc.clone())?;
    let residuals = [
        inst.control_residual(&solutions[0]),
        inst.control_residual(&solutions[1]),
    ];
    Ok(NonuniqueInstance {
        lambda,
        v_signs,
        uc,
        solutions,
        residuals,
    })
}
