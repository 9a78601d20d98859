//! Randomized property suites behind `smc certify`.
//!
//! Each trial draws from its own ChaCha stream keyed by `(seed, trial)`, so a
//! report is reproducible regardless of how rayon schedules the trials.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cone::{
    accepts, classify_cone_membership, construct_nonunique_instance, exhaustive_solutions,
    solve_control_equation, solve_full_enumeration, ConeStatus, EigenChoice, SolveInstance,
};
use crate::controller::{compute_control, ControllerConfig, GainDecomposition};
use crate::registry::Registry;
use crate::sign::{
    condition_number, enumerate_sign_patterns, induced_norm, matrix_to_rows, vector_inf_norm,
    Matrix, NormKind, SignPattern, Vector,
};

pub const DEFAULT_TRIALS: usize = 1000;
/// Counterexamples kept in a report; the failure count is always exact.
pub const MAX_COUNTEREXAMPLES: usize = 20;
/// Two solutions closer than this are the same solution.
pub const DISTINCT_TOL: f64 = 1e-9;
const RESIDUAL_RTOL: f64 = 1e-9;
const NORM_TARGETS: [f64; 3] = [1.0, 1.5, 3.0];

#[derive(Debug, Clone)]
pub struct CertifyOptions {
    pub seed: u64,
    pub trials: usize,
    /// Replaces the random bound matrix in suites that draw one.
    pub inject_f_bar: Option<Matrix>,
}

impl CertifyOptions {
    pub fn new(seed: u64, trials: usize) -> Self {
        Self {
            seed,
            trials,
            inject_f_bar: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub trials: usize,
    pub checks: usize,
    pub failures: usize,
    /// Trials that produced a verified witness (multi-solution instances for
    /// the non-uniqueness suite).
    pub verified_instances: usize,
    pub injected_f_bar: Option<Vec<Vec<f64>>>,
    pub counterexamples: Vec<Value>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Outcome of one trial.
#[derive(Debug, Default)]
pub struct TrialOutcome {
    pub checks: usize,
    pub verified: bool,
    pub failures: Vec<Value>,
}

impl TrialOutcome {
    fn check(&mut self, ok: bool, detail: impl FnOnce() -> Value) {
        self.checks += 1;
        if !ok {
            self.failures.push(detail());
        }
    }
}

pub trait CertificationSuite: Sync {
    fn name(&self) -> &'static str;
    fn trial(&self, rng: &mut ChaCha8Rng, index: usize, opts: &CertifyOptions) -> TrialOutcome;
}

pub fn suite_registry() -> &'static Registry<&'static dyn CertificationSuite> {
    static REG: OnceLock<Registry<&'static dyn CertificationSuite>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("certification suite")
            .with("cones", &Cones as &dyn CertificationSuite)
            .with("uniqueness", &Uniqueness)
            .with("theorem3", &NonUniqueness)
            .with("lyapunov", &Lyapunov)
    })
}

pub fn run_suite(suite: &dyn CertificationSuite, opts: &CertifyOptions) -> SuiteReport {
    let outcomes: Vec<TrialOutcome> = (0..opts.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            suite.trial(&mut rng, i, opts)
        })
        .collect();
    let mut report = SuiteReport {
        suite: suite.name().to_string(),
        seed: opts.seed,
        trials: opts.trials,
        checks: 0,
        failures: 0,
        verified_instances: 0,
        injected_f_bar: opts.inject_f_bar.as_ref().map(matrix_to_rows),
        counterexamples: Vec::new(),
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        report.checks += o.checks;
        report.failures += o.failures.len();
        report.verified_instances += o.verified as usize;
        for mut f in o.failures {
            if report.counterexamples.len() < MAX_COUNTEREXAMPLES {
                f["trial"] = json!(i);
                report.counterexamples.push(f);
            }
        }
    }
    report
}

fn rows(a: &Matrix) -> Value {
    json!(matrix_to_rows(a))
}

fn vec_json(x: &Vector) -> Value {
    json!(x.as_slice())
}

fn normal_vector(rng: &mut ChaCha8Rng, m: usize) -> Vector {
    Vector::from_fn(m, |_, _| rng.sample(StandardNormal))
}

fn random_signs(rng: &mut ChaCha8Rng, m: usize) -> SignPattern {
    SignPattern::new(rng.gen_range(0..1u16 << m), m).expect("m <= 6")
}

/// Nonnegative bound matrix scaled so its infinity norm is `target`.
fn random_bound(rng: &mut ChaCha8Rng, m: usize, target: f64) -> Matrix {
    let raw = Matrix::from_fn(m, m, |_, _| rng.gen::<f64>());
    let n = induced_norm(&raw, NormKind::Infinity).expect("square");
    if n > 0.0 {
        raw * (target / n)
    } else {
        raw
    }
}

/// `H = S(v) F̄` with `‖F̄‖∞` uniform in `[0, 0.95]`, or the injected bound.
fn draw_h(rng: &mut ChaCha8Rng, opts: &CertifyOptions) -> Matrix {
    match &opts.inject_f_bar {
        Some(f) => random_signs(rng, f.nrows()).apply_rows(f),
        None => {
            let m = rng.gen_range(1..=6);
            let target = rng.gen_range(0.0..=0.95);
            random_signs(rng, m).apply_rows(&random_bound(rng, m, target))
        }
    }
}

/// Convex-cone geometry: disjoint interiors, shared faces, full coverage.
pub struct Cones;

impl CertificationSuite for Cones {
    fn name(&self) -> &'static str {
        "cones"
    }

    fn trial(&self, rng: &mut ChaCha8Rng, _index: usize, opts: &CertifyOptions) -> TrialOutcome {
        let mut out = TrialOutcome::default();
        let h = draw_h(rng, opts);
        let m = h.nrows();
        let patterns = enumerate_sign_patterns(m).expect("m <= 6");

        // interior points belong to exactly one cone
        for _ in 0..4 {
            let own = patterns[rng.gen_range(0..patterns.len())];
            let p = Vector::from_fn(m, |_, _| rng.gen_range(0.1..2.0));
            let y = (own.to_matrix() + &h) * &p;
            let interiors: Vec<String> = patterns
                .iter()
                .filter(|&&q| {
                    classify_cone_membership(q, &h, &y)
                        .map(|c| c.status == ConeStatus::Interior)
                        .unwrap_or(false)
                })
                .map(|q| q.to_string())
                .collect();
            out.check(interiors == [own.to_string()], || {
                json!({"property": "disjoint interiors", "h": rows(&h), "y": vec_json(&y),
                       "pattern": own.to_string(), "interior_under": interiors})
            });
        }

        // a point on a face is shared by the neighbouring pattern with the same û
        if let Some(face) = self.face_point(rng, &h) {
            let (inst, zero) = face;
            match solve_control_equation(&inst) {
                Ok(r) => {
                    let eps = inst.zero_tolerance();
                    let flipped = zero
                        .iter()
                        .filter(|&&i| r.magnitudes[i].abs() <= eps)
                        .fold(r.pattern, |p, &i| p.flip(i));
                    let d = flipped.to_matrix() + inst.h();
                    let shared = crate::sign::lu_solve(&d, inst.uc()).is_some_and(|p2| {
                        accepts(&p2, eps)
                            && vector_inf_norm(&(flipped.apply(&p2) - &r.u_hat))
                                <= DISTINCT_TOL * (1.0 + vector_inf_norm(inst.uc()))
                    });
                    out.check(r.on_surface && shared, || {
                        json!({"property": "shared faces", "h": rows(&h), "uc": vec_json(inst.uc()),
                               "on_surface": r.on_surface})
                    });
                }
                Err(e) => out.check(false, || {
                    json!({"property": "shared faces", "h": rows(&h), "uc": vec_json(inst.uc()),
                           "error": e.to_string()})
                }),
            }
        }

        // coverage: every u_c lies in some cone
        for _ in 0..10 {
            let uc = normal_vector(rng, m);
            let inst = SolveInstance::new(h.clone(), uc.clone()).expect("shapes match");
            let covered = exhaustive_solutions(&inst).is_ok_and(|r| !r.accepted.is_empty());
            out.check(covered, || {
                json!({"property": "coverage", "h": rows(&h), "uc": vec_json(&uc)})
            });
        }
        out
    }
}

impl Cones {
    /// `u_c = (S + H) p` with at least one zero in `p`; returns the zero indices.
    fn face_point(
        &self,
        rng: &mut ChaCha8Rng,
        h: &Matrix,
    ) -> Option<(SolveInstance, Vec<usize>)> {
        let m = h.nrows();
        let pattern = random_signs(rng, m);
        let mut p = Vector::from_fn(m, |_, _| rng.gen_range(0.1..2.0));
        let zero = rng.gen_range(0..m);
        p[zero] = 0.0;
        let uc = (pattern.to_matrix() + h) * &p;
        SolveInstance::new(h.clone(), uc)
            .ok()
            .map(|inst| (inst, vec![zero]))
    }
}

/// Residual, uniqueness and warm-start agreement against the exhaustive oracle.
pub struct Uniqueness;

impl CertificationSuite for Uniqueness {
    fn name(&self) -> &'static str {
        "uniqueness"
    }

    fn trial(&self, rng: &mut ChaCha8Rng, _index: usize, opts: &CertifyOptions) -> TrialOutcome {
        let mut out = TrialOutcome::default();
        let h = draw_h(rng, opts);
        let uc = normal_vector(rng, h.nrows());
        let inst = SolveInstance::new(h.clone(), uc.clone()).expect("shapes match");
        let base = || json!({"h": rows(&h), "uc": vec_json(&uc)});

        let distinct = match exhaustive_solutions(&inst) {
            Ok(r) => r.distinct_solutions(DISTINCT_TOL),
            Err(_) => Vec::new(),
        };
        out.check(distinct.len() == 1, || {
            let mut v = base();
            v["property"] = json!("unique solution");
            v["solutions"] = json!(distinct.iter().map(|u| u.as_slice().to_vec()).collect::<Vec<_>>());
            v
        });

        let tol = RESIDUAL_RTOL * (1.0 + vector_inf_norm(&uc));
        match (solve_control_equation(&inst), solve_full_enumeration(&inst)) {
            (Ok(warm), Ok(full)) => {
                let res = inst.control_residual(&warm.u_hat);
                out.check(res <= tol, || {
                    let mut v = base();
                    v["property"] = json!("residual");
                    v["residual"] = json!(res);
                    v
                });
                let agrees = distinct
                    .iter()
                    .any(|u| vector_inf_norm(&(u - &warm.u_hat)) <= DISTINCT_TOL);
                out.check(agrees, || {
                    let mut v = base();
                    v["property"] = json!("agrees with exhaustive oracle");
                    v["u_hat"] = vec_json(&warm.u_hat);
                    v
                });
                let gap = vector_inf_norm(&(&warm.u_hat - &full.u_hat));
                out.check(gap <= 1e-12, || {
                    let mut v = base();
                    v["property"] = json!("warm start agrees with full enumeration");
                    v["gap"] = json!(gap);
                    v
                });
            }
            (Err(e), _) | (_, Err(e)) => out.check(false, || {
                let mut v = base();
                v["property"] = json!("solver");
                v["error"] = json!(e.to_string());
                v
            }),
        }
        out
    }
}

/// Multi-solution instances from symmetric bounds with `‖F̄‖₂ >= 1`.
pub struct NonUniqueness;

impl CertificationSuite for NonUniqueness {
    fn name(&self) -> &'static str {
        "theorem3"
    }

    fn trial(&self, rng: &mut ChaCha8Rng, index: usize, _opts: &CertifyOptions) -> TrialOutcome {
        let mut out = TrialOutcome::default();
        let m = rng.gen_range(1..=6);
        let raw = Matrix::from_fn(m, m, |_, _| rng.gen::<f64>());
        let sym = (&raw + raw.transpose()) * 0.5;
        let target = NORM_TARGETS[index % NORM_TARGETS.len()];
        let f_bar = &sym * (target / induced_norm(&sym, NormKind::Two).expect("square"));
        let base = || json!({"f_bar": rows(&f_bar), "target_two_norm": target});

        let inst = match construct_nonunique_instance(&f_bar, EigenChoice::Dominant) {
            Ok(i) => i,
            Err(e) => {
                out.check(false, || {
                    let mut v = base();
                    v["error"] = json!(e.to_string());
                    v
                });
                return out;
            }
        };
        let tol = RESIDUAL_RTOL * (1.0 + vector_inf_norm(&inst.uc));
        let gap = vector_inf_norm(&(&inst.solutions[0] - &inst.solutions[1]));
        let ok = inst.residuals.iter().all(|&r| r <= tol) && gap > DISTINCT_TOL;
        out.check(ok, || {
            let mut v = base();
            v["residuals"] = json!(inst.residuals);
            v["gap"] = json!(gap);
            v
        });
        // when u_c != 0 the exhaustive oracle sees both solutions independently
        if ok && inst.uc.iter().any(|&x| x != 0.0) {
            let h = inst.v_signs.apply_rows(&f_bar);
            let found = SolveInstance::new(h, inst.uc.clone())
                .ok()
                .and_then(|i| exhaustive_solutions(&i).ok())
                .map_or(0, |r| r.distinct_solutions(DISTINCT_TOL).len());
            out.check(found >= 2, || {
                let mut v = base();
                v["property"] = json!("exhaustive oracle finds both");
                v["found"] = json!(found);
                v
            });
        }
        out.verified = out.failures.is_empty();
        out
    }
}

/// `sᵀṡ <= −ρ sᵀs` for exact-sign control against gains and drifts drawn
/// anywhere inside the declared bounds.
pub struct Lyapunov;

impl Lyapunov {
    fn decomposition(rng: &mut ChaCha8Rng, m: usize) -> Option<GainDecomposition> {
        let draw = |rng: &mut ChaCha8Rng| Matrix::from_fn(m, m, |_, _| rng.gen_range(-2.0..2.0));
        let (mm, q) = (draw(rng), draw(rng));
        if condition_number(&mm) > 1e4 || condition_number(&q) > 1e4 {
            return None;
        }
        let target = rng.gen_range(0.0..0.95);
        let f_bar = random_bound(rng, m, target);
        GainDecomposition::new(mm, q, f_bar).ok()
    }
}

impl CertificationSuite for Lyapunov {
    fn name(&self) -> &'static str {
        "lyapunov"
    }

    fn trial(&self, rng: &mut ChaCha8Rng, _index: usize, _opts: &CertifyOptions) -> TrialOutcome {
        let mut out = TrialOutcome::default();
        let m = rng.gen_range(1..=4);
        let dec = loop {
            if let Some(d) = Self::decomposition(rng, m) {
                break d;
            }
        };
        let rho = rng.gen_range(0.1..2.0);
        let f_bar = Vector::from_fn(m, |_, _| rng.gen_range(0.0..2.0));
        let Ok(mut cfg) = ControllerConfig::new(rho, f_bar, dec) else {
            out.check(false, || json!({"property": "config"}));
            return out;
        };
        cfg.eta_bar = Vector::from_fn(m, |_, _| rng.gen_range(0.0..0.5));

        for _ in 0..5 {
            let s = normal_vector(rng, m);
            let f0 = 5.0 * normal_vector(rng, m);
            let df = cfg.f_bar.map(|b| rng.gen_range(-b..=b));
            let eta = cfg.eta_bar.map(|b| rng.gen_range(-b..=b));
            let f = cfg
                .decomposition
                .f_bar()
                .map(|b| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 });
            let detail = |extra: Value| {
                json!({"property": "lyapunov decrease", "m": rows(cfg.decomposition.m()),
                       "q": rows(cfg.decomposition.q()), "f_bar": rows(cfg.decomposition.f_bar()),
                       "rho": cfg.rho, "s": vec_json(&s), "f0": vec_json(&f0), "detail": extra})
            };
            match compute_control(&f0, &s, &cfg) {
                Ok(c) => {
                    let gain = cfg.decomposition.m() * (Matrix::identity(m, m) + f);
                    let sdot = &f0 + &df + gain * &c.u_hat + &eta;
                    let lhs = s.dot(&sdot);
                    let rhs = -cfg.rho * s.dot(&s);
                    let scale = 1.0 + s.norm() * (f0.norm() + c.u_c.norm());
                    out.check(lhs <= rhs + 1e-9 * scale, || {
                        detail(json!({"s_dot_s": lhs, "bound": rhs}))
                    });
                }
                Err(e) => out.check(false, || detail(json!(e.to_string()))),
            }
        }
        out
    }
}
