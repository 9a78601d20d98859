//! Fixed-step closed-loop simulation, metrics and Lyapunov auditing.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{compute_control, ControllerConfig, ControllerError};
use crate::plants::{Plant, PlantError};
use crate::sign::{Matrix, Vector};

/// Largest step accepted for a sampled-data control loop.
pub const MAX_DT: f64 = 1e-2;
/// Audit tolerance constant `c` in `tol = c·dt·(1 + max‖ṡ‖²)`.
pub const AUDIT_C: f64 = 1.0;
pub const DEFAULT_AUDIT_BOUNDARY: f64 = 0.05;

fn default_true() -> bool {
    true
}

fn default_boundary() -> f64 {
    DEFAULT_AUDIT_BOUNDARY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    /// Overrides `controller.smoothing` when set.
    #[serde(default)]
    pub smoothing: Option<bool>,
    #[serde(default = "default_true")]
    pub lyapunov_audit: bool,
    #[serde(default = "default_boundary")]
    pub audit_boundary: f64,
}

impl SimSettings {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            seed: 0,
            smoothing: None,
            lyapunov_audit: true,
            audit_boundary: DEFAULT_AUDIT_BOUNDARY,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::Settings(format!("sim.dt: must be > 0, got {}", self.dt)));
        }
        if self.dt > MAX_DT {
            return Err(SimError::Settings(format!(
                "sim.dt: must be <= {MAX_DT}, got {}",
                self.dt
            )));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(SimError::Settings(format!(
                "sim.horizon: must be >= dt, got {}",
                self.horizon
            )));
        }
        if !(self.audit_boundary.is_finite() && self.audit_boundary >= 0.0) {
            return Err(SimError::Settings("sim.audit_boundary: must be >= 0".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{0}")]
    Settings(String),
    #[error("solver failure at t = {t}: {source}")]
    SolverFailure { t: f64, source: ControllerError },
    #[error("state guard violated at t = {t}: {source}")]
    StateGuardViolation { t: f64, source: PlantError },
    #[error("plant evaluation failed at t = {t}: {source}")]
    Plant { t: f64, source: PlantError },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub t: f64,
    pub state: Vector,
    pub s: Vector,
    pub u: Vector,
    pub v: f64,
    pub patterns_tried: usize,
    pub on_surface: bool,
    pub tracked: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    pub state_names: Vec<String>,
    pub tracked_names: Vec<String>,
    pub rows: Vec<Row>,
}

impl Trajectory {
    pub fn csv_header(&self) -> String {
        let m = self.rows.first().map_or(2, |r| r.s.len());
        let mut cols = vec!["t".to_string()];
        cols.extend(self.state_names.iter().cloned());
        cols.extend((1..=m).map(|i| format!("s{i}")));
        cols.extend((1..=m).map(|i| format!("u{i}")));
        cols.extend(["V", "patterns_tried", "on_surface"].map(String::from));
        cols.join(",")
    }

    /// One row per step; floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.csv_header())?;
        for r in &self.rows {
            let mut line = format!("{:?}", r.t);
            for x in r.state.iter().chain(r.s.iter()).chain(r.u.iter()) {
                line.push_str(&format!(",{x:?}"));
            }
            line.push_str(&format!(",{:?},{},{}", r.v, r.patterns_tried, r.on_surface));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn final_state(&self) -> Option<&Vector> {
        self.rows.last().map(|r| &r.state)
    }
}

/// Failure with the rows logged up to and including the failing step.
#[derive(Debug, Clone)]
pub struct SimFailure {
    pub error: SimError,
    pub partial: Trajectory,
    pub state: Option<Vector>,
}

impl std::fmt::Display for SimFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for SimFailure {}

fn rk4_step(
    plant: &dyn Plant,
    t: f64,
    x: &Vector,
    u: &Vector,
    dt: f64,
) -> Result<Vector, PlantError> {
    let h = 0.5 * dt;
    let k1 = plant.derivative(t, x, u)?;
    let k2 = plant.derivative(t + h, &(x + h * &k1), u)?;
    let k3 = plant.derivative(t + h, &(x + h * &k2), u)?;
    let k4 = plant.derivative(t + dt, &(x + dt * &k3), u)?;
    Ok(x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Integrates the true plant with control held over each step.
pub fn run_closed_loop(
    plant: &dyn Plant,
    cfg: &ControllerConfig,
    sim: &SimSettings,
) -> Result<Trajectory, Box<SimFailure>> {
    let mut traj = Trajectory {
        dt: sim.dt,
        state_names: plant.state_names(),
        tracked_names: plant.tracked_names(),
        rows: Vec::new(),
    };
    if let Err(error) = sim.validate() {
        return Err(Box::new(SimFailure {
            error,
            partial: traj,
            state: None,
        }));
    }
    let mut cfg = cfg.clone();
    if let Some(on) = sim.smoothing {
        cfg.smoothing = on;
    }
    let steps = sim.steps();
    traj.rows.reserve(steps + 1);
    let mut x = plant.initial_state();
    for i in 0..=steps {
        let t = i as f64 * sim.dt;
        let fail = |error: SimError, traj: Trajectory, x: &Vector| {
            log::warn!("simulation stopped: {error}");
            Box::new(SimFailure {
                error,
                partial: traj,
                state: Some(x.clone()),
            })
        };
        if let Err(source) = plant.check_guard(&x) {
            return Err(fail(SimError::StateGuardViolation { t, source }, traj, &x));
        }
        let terms = match plant.sliding(t, &x) {
            Ok(v) => v,
            Err(source) => return Err(fail(SimError::Plant { t, source }, traj, &x)),
        };
        let out = match compute_control(&terms.f, &terms.s, &cfg) {
            Ok(v) => v,
            Err(source) => return Err(fail(SimError::SolverFailure { t, source }, traj, &x)),
        };
        traj.rows.push(Row {
            t,
            state: x.clone(),
            v: 0.5 * terms.s.dot(&terms.s),
            s: terms.s,
            u: out.u.clone(),
            patterns_tried: out.solver.patterns_tried,
            on_surface: out.solver.on_surface,
            tracked: plant.tracked(t, &x),
        });
        if i == steps {
            break;
        }
        x = match rk4_step(plant, t, &x, &out.u, sim.dt) {
            Ok(v) => v,
            Err(source) => return Err(fail(SimError::Plant { t, source }, traj, &x)),
        };
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableMetrics {
    pub name: String,
    pub band: f64,
    /// Start of the final stay inside the band; `None` if never settled.
    pub convergence_time: Option<f64>,
    pub overshoot: f64,
    pub rms_tail: f64,
    pub max_abs_tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub variables: Vec<VariableMetrics>,
    pub converged: bool,
    pub tail_start: f64,
    pub max_abs_control: Vec<f64>,
    /// Total variation of each control component.
    pub chattering_index: Vec<f64>,
}

pub fn compute_metrics(traj: &Trajectory, bands: &[f64], tail_start: f64) -> Metrics {
    let rows = &traj.rows;
    let tail: Vec<&Row> = rows.iter().filter(|r| r.t >= tail_start).collect();
    let variables: Vec<VariableMetrics> = traj
        .tracked_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let band = bands.get(j).copied().unwrap_or(f64::INFINITY);
            let last_out = rows.iter().rposition(|r| r.tracked[j].abs() > band);
            let convergence_time = match last_out {
                None => Some(0.0),
                Some(i) if i + 1 < rows.len() => Some(rows[i + 1].t),
                Some(_) => None,
            };
            let x0 = rows.first().map_or(0.0, |r| r.tracked[j]);
            let dir = if x0 < 0.0 { 1.0 } else { -1.0 };
            let overshoot = if x0 == 0.0 {
                0.0
            } else {
                rows.iter().map(|r| (dir * r.tracked[j]).max(0.0)).fold(0.0, f64::max)
            };
            let (sq, mx) = tail.iter().fold((0.0, 0.0f64), |(sq, mx), r| {
                let v = r.tracked[j];
                (sq + v * v, mx.max(v.abs()))
            });
            VariableMetrics {
                name: name.clone(),
                band,
                convergence_time,
                overshoot,
                rms_tail: if tail.is_empty() { 0.0 } else { (sq / tail.len() as f64).sqrt() },
                max_abs_tail: mx,
            }
        })
        .collect();
    let m = rows.first().map_or(0, |r| r.u.len());
    let mut max_abs_control = vec![0.0f64; m];
    let mut chattering_index = vec![0.0; m];
    for (i, r) in rows.iter().enumerate() {
        for k in 0..m {
            max_abs_control[k] = max_abs_control[k].max(r.u[k].abs());
            if i > 0 {
                chattering_index[k] += (r.u[k] - rows[i - 1].u[k]).abs();
            }
        }
    }
    Metrics {
        converged: variables.iter().all(|v| v.convergence_time.is_some()),
        variables,
        tail_start,
        max_abs_control,
        chattering_index,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditViolation {
    pub row: usize,
    pub t: f64,
    pub rate: f64,
    pub bound: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub c: f64,
    pub tol: f64,
    pub boundary: f64,
    pub within_declared_bounds: bool,
    pub domain_rows: usize,
    pub empty_domain: bool,
    /// Largest `rate − bound` over the domain (before tolerance).
    pub max_excess: Option<f64>,
    pub violations: Vec<AuditViolation>,
}

/// Checks `(V(t+dt) − V(t))/dt <= −2ρ V(t) + tol` for rows with
/// `‖s‖∞ > boundary`, provided the true parameters are in the declared box.
pub fn lyapunov_audit(
    traj: &Trajectory,
    rho: f64,
    boundary: f64,
    within_declared_bounds: bool,
) -> AuditReport {
    let dt = traj.dt;
    let rows = &traj.rows;
    let max_sdot_sq = rows
        .windows(2)
        .map(|w| ((&w[1].s - &w[0].s) / dt).norm_squared())
        .fold(0.0, f64::max);
    let tol = AUDIT_C * dt * (1.0 + max_sdot_sq);
    let mut report = AuditReport {
        c: AUDIT_C,
        tol,
        boundary,
        within_declared_bounds,
        domain_rows: 0,
        empty_domain: true,
        max_excess: None,
        violations: Vec::new(),
    };
    if !within_declared_bounds {
        return report;
    }
    for (i, w) in rows.windows(2).enumerate() {
        if w[0].s.amax() <= boundary {
            continue;
        }
        report.domain_rows += 1;
        let rate = (w[1].v - w[0].v) / dt;
        let bound = -2.0 * rho * w[0].v;
        let excess = rate - bound;
        report.max_excess = Some(report.max_excess.map_or(excess, |m: f64| m.max(excess)));
        if excess > tol {
            report.violations.push(AuditViolation {
                row: i,
                t: w[0].t,
                rate,
                bound,
                excess,
            });
        }
    }
    report.empty_domain = report.domain_rows == 0;
    report
}

/// Realized `F = M⁻¹ (G_true − M Q) Q⁻¹` at a state.
pub fn realized_uncertainty(
    plant: &dyn Plant,
    cfg: &ControllerConfig,
    t: f64,
    x: &Vector,
) -> Result<Matrix, PlantError> {
    let g = plant.true_sliding(t, x)?.g;
    let dec = &cfg.decomposition;
    Ok(dec.m_inv() * (g - dec.g0()) * dec.q_inv())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(values: &[f64], dt: f64) -> Trajectory {
        Trajectory {
            dt,
            state_names: vec!["x".into()],
            tracked_names: vec!["x".into()],
            rows: values
                .iter()
                .enumerate()
                .map(|(i, &v)| Row {
                    t: i as f64 * dt,
                    state: Vector::from_element(1, v),
                    s: Vector::from_element(1, v),
                    u: Vector::from_element(1, v),
                    v: 0.5 * v * v,
                    patterns_tried: 1,
                    on_surface: false,
                    tracked: vec![v],
                })
                .collect(),
        }
    }

    #[test]
    fn zero_trajectory_metrics() {
        let m = compute_metrics(&synthetic(&[0.0; 10], 0.1), &[0.05], 0.0);
        assert_eq!(m.variables[0].convergence_time, Some(0.0));
        assert_eq!(m.variables[0].overshoot, 0.0);
        assert!(m.converged);
    }

    #[test]
    fn exponential_decay_convergence_time() {
        let dt = 1e-3;
        let vals: Vec<f64> = (0..=6000).map(|i| (-(i as f64) * dt).exp()).collect();
        let m = compute_metrics(&synthetic(&vals, dt), &[0.05], 0.0);
        let t = m.variables[0].convergence_time.unwrap();
        assert!((t - 20f64.ln()).abs() <= dt, "{t}");
    }

    #[test]
    fn square_wave_total_variation() {
        let n = 7;
        let vals: Vec<f64> = (0..=n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let m = compute_metrics(&synthetic(&vals, 0.1), &[2.0], 0.0);
        assert_eq!(m.chattering_index[0], n as f64);
        let vals: Vec<f64> = (0..=n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = compute_metrics(&synthetic(&vals, 0.1), &[2.0], 0.0);
        assert_eq!(m.chattering_index[0], 2.0 * n as f64);
    }

    #[test]
    fn never_settling_is_not_converged() {
        let m = compute_metrics(&synthetic(&[1.0, 1.0, 1.0], 0.1), &[0.5], 0.0);
        assert_eq!(m.variables[0].convergence_time, None);
        assert!(!m.converged);
    }

    #[test]
    fn audit_inside_boundary_reports_empty_domain() {
        let r = lyapunov_audit(&synthetic(&[0.01, 0.02, 0.01], 0.1), 0.5, 0.05, true);
        assert!(r.empty_domain);
        assert!(r.violations.is_empty());
    }

    #[test]
    fn audit_flags_growth() {
        let vals: Vec<f64> = (0..100).map(|i| 1.0 + 0.1 * i as f64).collect();
        let r = lyapunov_audit(&synthetic(&vals, 0.01), 0.5, 0.05, true);
        assert!(!r.violations.is_empty());
        let r = lyapunov_audit(&synthetic(&vals, 0.01), 0.5, 0.05, false);
        assert!(r.empty_domain && r.violations.is_empty());
    }

    #[test]
    fn csv_header_and_float_format() {
        let t = synthetic(&[0.1, 1e-23], 0.001);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x,s1,u1,V,patterns_tried,on_surface");
        assert_eq!(lines[1], "0.0,0.1,0.1,0.1,0.005000000000000001,1,false");
        assert!(lines[2].starts_with("0.001,1e-23,"));
        let parsed: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(parsed, 0.5 * 0.1 * 0.1);
    }

    #[test]
    fn settings_validation() {
        assert!(SimSettings::new(0.0, 1.0).validate().is_err());
        assert!(SimSettings::new(0.02, 1.0).validate().is_err());
        assert!(SimSettings::new(1e-3, 1e-4).validate().is_err());
        assert_eq!(SimSettings::new(1e-3, 20.0).steps(), 20_000);
    }
}
