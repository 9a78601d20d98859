//! Independent oracles shared by the integration tests. Nothing here calls
//! into the solver or plant code it is used to check.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smc_core::plants::manipulator::ManipulatorParams;
use smc_core::plants::spacecraft::SpacecraftParams;

pub fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Spacecraft accelerations `[v̇_z, θ̈, ψ̈]` by eliminating `v̇_z` from the
/// first row and solving the remaining 2x2 system by Cramer's rule.
pub fn spacecraft_accelerations(p: &SpacecraftParams, x: &[f64], u: &[f64]) -> [f64; 3] {
    let (theta_dot, psi, psi_dot, v_x) = (x[2], x[3], x[4], x[5]);
    let (sin, cos) = psi.sin_cos();
    let mt = p.m + p.m_f;
    let fa = p.m_f * p.a * cos;
    let jf = p.inertia_f + p.m_f * p.a * p.a;

    // rows of N and the right-hand side
    let r1 = [mt, fa + p.m * p.b, fa];
    let r2 = [p.m * p.b, p.inertia + p.m * p.b * p.b, 0.0];
    let r3 = [fa, jf, jf];
    let b1 = mt * theta_dot * v_x + p.m_f * p.a * (theta_dot + psi_dot).powi(2) * sin + u[0];
    let b2 = p.m * p.b * theta_dot * v_x + p.b * u[0] + u[1];
    let b3 = -p.epsilon * psi_dot - p.m_f * p.a * p.thrust / mt * sin + p.m_f * p.a * theta_dot * v_x * cos;

    // v̇_z = (b1 − r1[1] θ̈ − r1[2] ψ̈) / r1[0]
    let k2 = r2[0] / r1[0];
    let k3 = r3[0] / r1[0];
    let a11 = r2[1] - k2 * r1[1];
    let a12 = r2[2] - k2 * r1[2];
    let c1 = b2 - k2 * b1;
    let a21 = r3[1] - k3 * r1[1];
    let a22 = r3[2] - k3 * r1[2];
    let c2 = b3 - k3 * b1;
    let det = a11 * a22 - a12 * a21;
    let theta_dd = (c1 * a22 - a12 * c2) / det;
    let psi_dd = (a11 * c2 - a21 * c1) / det;
    let vz_dot = (b1 - r1[1] * theta_dd - r1[2] * psi_dd) / r1[0];
    [vz_dot, theta_dd, psi_dd]
}

/// Lagrangian model with absolute link angles from the upward vertical and
/// point masses at the link ends: returns `(M(q), C(q, q̇) q̇, G(q))`.
pub fn manipulator_lagrangian(p: &ManipulatorParams, x: &[f64], g: f64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let (q1, w1, q2, w2) = (x[0], x[1], x[2], x[3]);
    let mt = p.m1 + p.m2;
    let c = (q1 - q2).cos();
    let s = (q1 - q2).sin();
    let h = p.m2 * p.l1 * p.l2;
    let mass = DMatrix::from_row_slice(2, 2, &[mt * p.l1 * p.l1, h * c, h * c, p.m2 * p.l2 * p.l2]);
    let coriolis = DVector::from_vec(vec![h * s * w2 * w2, -h * s * w1 * w1]);
    let gravity = DVector::from_vec(vec![-mt * g * p.l1 * q1.sin(), -p.m2 * g * p.l2 * q2.sin()]);
    (mass, coriolis, gravity)
}

/// `q̈ = M⁻¹ (τ − C q̇ − G)` through a QR factorization.
pub fn manipulator_accelerations(p: &ManipulatorParams, x: &[f64], tau: &[f64], g: f64) -> [f64; 2] {
    let (mass, coriolis, gravity) = manipulator_lagrangian(p, x, g);
    let rhs = DVector::from_vec(tau.to_vec()) - coriolis - gravity;
    let acc = mass.qr().solve(&rhs).expect("mass matrix is regular");
    [acc[0], acc[1]]
}

/// Kinetic plus potential energy of the same model.
pub fn manipulator_energy(p: &ManipulatorParams, x: &[f64], g: f64) -> f64 {
    let (mass, _, _) = manipulator_lagrangian(p, x, g);
    let w = DVector::from_vec(vec![x[1], x[3]]);
    let kinetic = 0.5 * w.dot(&(&mass * &w));
    let potential = (p.m1 + p.m2) * g * p.l1 * x[0].cos() + p.m2 * g * p.l2 * x[2].cos();
    kinetic + potential
}

pub fn draw_manipulator_params(rng: &mut ChaCha8Rng) -> ManipulatorParams {
    ManipulatorParams {
        m1: rng.gen_range(0.7..=1.1),
        m2: rng.gen_range(0.8..=1.4),
        l1: rng.gen_range(0.9..=1.3),
        l2: rng.gen_range(0.8..=1.3),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `max |a − b| / (1 + max |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Every `û` solving `û + H |û| = u_c`, found by trying all sign patterns
/// with a full-pivot LU solve. Near-duplicates (face solutions) are merged.
pub fn brute_force_solutions(h: &DMatrix<f64>, uc: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = uc.len();
    let eps = 1e-10 * (1.0 + uc.amax());
    let mut out: Vec<DVector<f64>> = Vec::new();
    for bits in 0..(1u32 << m) {
        let signs: Vec<f64> = (0..m).map(|i| if bits >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
        let s = DMatrix::from_diagonal(&DVector::from_vec(signs.clone()));
        let Some(p) = (&s + h).full_piv_lu().solve(uc) else { continue };
        if p.iter().all(|&v| v >= -eps) {
            let u = DVector::from_fn(m, |i, _| signs[i] * p[i].max(0.0));
            if !out.iter().any(|o| (o - &u).amax() <= 1e-9) {
                out.push(u);
            }
        }
    }
    out
}
