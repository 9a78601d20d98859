//! Closed-loop simulation: trajectory shape, determinism, integrator order
//! and the Lyapunov audit on constructed plants.

mod common;

use smc_core::config::ExperimentConfig;
use smc_core::controller::{ControllerConfig, GainDecomposition};
use smc_core::plants::{Plant, PlantError, SlidingTerms};
use smc_core::sign::{Matrix, Vector};
use smc_core::sim::{lyapunov_audit, run_closed_loop, SimSettings, Trajectory};

use common::configs_dir;

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_path(&configs_dir().join(format!("{name}.json"))).unwrap().0
}

fn final_state_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    (a.final_state().unwrap() - b.final_state().unwrap()).amax()
}

/// `ṡ = u + d` with state `x = s`. The controller sees `f0 = 0`, `G = I`.
struct Integrator {
    d: Vector,
    s0: Vector,
}

impl Plant for Integrator {
    fn kind(&self) -> &'static str {
        "integrator"
    }
    fn state_names(&self) -> Vec<String> {
        vec!["x1".into(), "x2".into()]
    }
    fn initial_state(&self) -> Vector {
        self.s0.clone()
    }
    fn derivative(&self, _t: f64, _x: &Vector, u: &Vector) -> Result<Vector, PlantError> {
        Ok(u + &self.d)
    }
    fn sliding(&self, _t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        Ok(SlidingTerms {
            s: x.clone(),
            f: Vector::zeros(2),
            g: Matrix::identity(2, 2),
        })
    }
    fn true_sliding(&self, _t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        Ok(SlidingTerms {
            s: x.clone(),
            f: self.d.clone(),
            g: Matrix::identity(2, 2),
        })
    }
    fn check_guard(&self, _x: &Vector) -> Result<(), PlantError> {
        Ok(())
    }
    fn tracked_names(&self) -> Vec<String> {
        self.state_names()
    }
    fn tracked(&self, _t: f64, x: &Vector) -> Vec<f64> {
        x.as_slice().to_vec()
    }
    fn default_bands(&self) -> Vec<f64> {
        vec![0.1; 2]
    }
    // claims to be in bounds even when `d` is not, so the audit runs
    fn within_declared_bounds(&self) -> bool {
        true
    }
    fn uncertainty_box(&self) -> Vec<(String, f64, f64)> {
        Vec::new()
    }
    fn true_uncertain_values(&self) -> Vec<f64> {
        Vec::new()
    }
    fn grid_dim(&self) -> usize {
        0
    }
    fn gain_at(&self, _uncertain: &[f64], _grid_point: &[f64]) -> Result<Matrix, PlantError> {
        Ok(Matrix::identity(2, 2))
    }
}

/// Wraps a plant and replaces the applied control with a smooth function of
/// time, which isolates the integrator from the sampled feedback.
struct OpenLoop(Box<dyn Plant>);

impl Plant for OpenLoop {
    fn kind(&self) -> &'static str {
        self.0.kind()
    }
    fn state_names(&self) -> Vec<String> {
        self.0.state_names()
    }
    fn initial_state(&self) -> Vector {
        self.0.initial_state()
    }
    fn derivative(&self, t: f64, x: &Vector, _u: &Vector) -> Result<Vector, PlantError> {
        let u = Vector::from_vec(vec![2.0 * (3.0 * t).sin(), (2.0 * t).cos()]);
        self.0.derivative(t, x, &u)
    }
    fn sliding(&self, t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        self.0.sliding(t, x)
    }
    fn true_sliding(&self, t: f64, x: &Vector) -> Result<SlidingTerms, PlantError> {
        self.0.true_sliding(t, x)
    }
    fn check_guard(&self, x: &Vector) -> Result<(), PlantError> {
        self.0.check_guard(x)
    }
    fn tracked_names(&self) -> Vec<String> {
        self.0.tracked_names()
    }
    fn tracked(&self, t: f64, x: &Vector) -> Vec<f64> {
        self.0.tracked(t, x)
    }
    fn default_bands(&self) -> Vec<f64> {
        self.0.default_bands()
    }
    fn within_declared_bounds(&self) -> bool {
        self.0.within_declared_bounds()
    }
    fn uncertainty_box(&self) -> Vec<(String, f64, f64)> {
        self.0.uncertainty_box()
    }
    fn true_uncertain_values(&self) -> Vec<f64> {
        self.0.true_uncertain_values()
    }
    fn grid_dim(&self) -> usize {
        self.0.grid_dim()
    }
    fn gain_at(&self, uncertain: &[f64], grid_point: &[f64]) -> Result<Matrix, PlantError> {
        self.0.gain_at(uncertain, grid_point)
    }
}

fn unit_controller(f_bar: f64) -> ControllerConfig {
    let dec = GainDecomposition::new(Matrix::identity(2, 2), Matrix::identity(2, 2), Matrix::zeros(2, 2)).unwrap();
    ControllerConfig::new(0.5, Vector::from_element(2, f_bar), dec).unwrap()
}

#[test]
fn trajectory_has_uniform_rows() {
    let cfg = load("manipulator_case1");
    let plant = cfg.plant(0).unwrap();
    let sim = SimSettings::new(1e-3, 0.5);
    let traj = run_closed_loop(plant.as_ref(), &cfg.controller_config().unwrap(), &sim).unwrap();
    assert_eq!(traj.rows.len(), 501);
    for (i, r) in traj.rows.iter().enumerate() {
        assert_eq!(r.t, i as f64 * 1e-3);
        assert!((r.v - 0.5 * r.s.norm_squared()).abs() <= 1e-15 * (1.0 + r.v));
    }
}

#[test]
fn runs_are_bit_identical() {
    let cfg = load("spacecraft_k7");
    let ctl = cfg.controller_config().unwrap();
    let sim = SimSettings::new(1e-3, 2.0);
    let a = run_closed_loop(cfg.plant(11).unwrap().as_ref(), &ctl, &sim).unwrap();
    let b = run_closed_loop(cfg.plant(11).unwrap().as_ref(), &ctl, &sim).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn equilibrium_without_uncertainty_stays_put() {
    let mut raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(configs_dir().join("spacecraft_k1.json")).unwrap()).unwrap();
    for key in ["m", "m_f", "inertia_f", "a", "epsilon"] {
        raw["plant"]["bounds"][key] = 0.0.into();
    }
    for key in ["v_z", "theta_deg", "theta_dot_deg", "psi_deg", "psi_dot_deg"] {
        raw["plant"]["initial"][key] = 0.0.into();
    }
    let cfg = ExperimentConfig::from_value(&raw).unwrap();
    let plant = cfg.plant(0).unwrap();
    let traj = run_closed_loop(plant.as_ref(), &cfg.controller_config().unwrap(), &SimSettings::new(1e-3, 1.0)).unwrap();
    for r in &traj.rows {
        assert_eq!(r.u.amax(), 0.0);
        assert_eq!(r.s.amax(), 0.0);
        assert_eq!(r.tracked, vec![0.0; 3]);
    }
}

#[test]
fn integrator_is_fourth_order_with_smooth_input() {
    let cfg = load("manipulator_case1");
    let plant = OpenLoop(cfg.plant(0).unwrap());
    let ctl = cfg.controller_config().unwrap();
    let runs: Vec<Trajectory> = [8e-3, 4e-3, 2e-3]
        .iter()
        .map(|&dt| run_closed_loop(&plant, &ctl, &SimSettings::new(dt, 2.0)).unwrap())
        .collect();
    let ratio = final_state_gap(&runs[0], &runs[1]) / final_state_gap(&runs[1], &runs[2]);
    assert!(ratio >= 14.0, "ratio {ratio}");
}

#[test]
fn step_halving_closed_loop_shows_third_order() {
    // the control is held over each step, so this measures the whole sampled loop
    let cfg = load("manipulator_case1");
    let plant = cfg.plant(0).unwrap();
    let ctl = cfg.controller_config().unwrap().with_smoothing(true);
    let runs: Vec<Trajectory> = [2e-3, 1e-3, 5e-4]
        .iter()
        .map(|&dt| run_closed_loop(plant.as_ref(), &ctl, &SimSettings::new(dt, 1.024)).unwrap())
        .collect();
    let (d1, d2) = (final_state_gap(&runs[0], &runs[1]), final_state_gap(&runs[1], &runs[2]));
    println!("step halving: gaps {d1:.3e} {d2:.3e} ratio {:.2}", d1 / d2);
    assert!(d1 / d2 >= 8.0, "ratio {:.2} (gaps {d1:.3e}, {d2:.3e})", d1 / d2);
}

#[test]
fn audit_is_clean_when_disturbance_is_within_bound() {
    let plant = Integrator {
        d: Vector::from_vec(vec![0.3, -0.2]),
        s0: Vector::from_vec(vec![2.0, -1.5]),
    };
    let ctl = unit_controller(0.5);
    let traj = run_closed_loop(&plant, &ctl, &SimSettings::new(1e-3, 5.0)).unwrap();
    let audit = lyapunov_audit(&traj, ctl.rho, 0.05, plant.within_declared_bounds());
    assert!(!audit.empty_domain);
    assert!(audit.violations.is_empty(), "{:?}", audit.violations.first());
}

#[test]
fn audit_flags_under_declared_disturbance() {
    let plant = Integrator {
        d: Vector::from_vec(vec![3.0, -3.0]),
        s0: Vector::from_vec(vec![0.2, 0.2]),
    };
    let ctl = unit_controller(0.5);
    let traj = run_closed_loop(&plant, &ctl, &SimSettings::new(1e-3, 2.0)).unwrap();
    let audit = lyapunov_audit(&traj, ctl.rho, 0.05, true);
    assert!(!audit.violations.is_empty());
    assert!(audit.max_excess.unwrap() > audit.tol);
}

#[test]
fn audit_is_skipped_outside_declared_bounds() {
    let plant = Integrator {
        d: Vector::from_vec(vec![3.0, -3.0]),
        s0: Vector::from_vec(vec![0.2, 0.2]),
    };
    let traj = run_closed_loop(&plant, &unit_controller(0.5), &SimSettings::new(1e-3, 1.0)).unwrap();
    let audit = lyapunov_audit(&traj, 0.5, 0.05, false);
    assert!(audit.violations.is_empty() && audit.empty_domain);
}

#[test]
fn exact_sign_spacecraft_has_clean_audit() {
    let cfg = load("spacecraft_k1");
    let plant = cfg.plant(0).unwrap();
    let ctl = cfg.controller_config().unwrap().with_smoothing(false);
    let mut sim = SimSettings::new(1e-3, 20.0);
    sim.smoothing = Some(false);
    let traj = run_closed_loop(plant.as_ref(), &ctl, &sim).unwrap();
    let audit = lyapunov_audit(&traj, ctl.rho, sim.audit_boundary, plant.within_declared_bounds());
    assert!(audit.within_declared_bounds);
    assert!(audit.violations.is_empty());
}
