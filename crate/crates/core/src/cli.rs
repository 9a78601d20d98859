//! Command implementations behind the `smc` binary. Each returns the process
//! exit code; results go to files, diagnostics to the log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::certify::{run_suite, suite_registry, CertifyOptions, SuiteReport};
use crate::config::{config_hash, ConfigError, ExperimentConfig};
use crate::controller::{check_admissibility, elementwise_condition, AdmissibilityReport, ElementwiseConditionReport};
use crate::decomposition::{
    nominal_gain, plant_gain_samples, pso_search, state_grid, DecompositionReport,
    UncertaintySampleSet,
};
use crate::plants::Plant;
use crate::sign::{matrix_from_rows, Matrix};
use crate::sim::{compute_metrics, lyapunov_audit, run_closed_loop, AuditReport, Metrics, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_NOT_CERTIFIABLE: i32 = 4;

/// Writes to a sibling temp file and renames it over `path`, so readers never
/// see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn ensure_dir(dir: &Path) -> Result<(), ConfigError> {
    fs::create_dir_all(dir).map_err(|e| ConfigError::new("output.dir", format!("{}: {e}", dir.display())))?;
    let probe = dir.join(format!(".probe-{}", std::process::id()));
    fs::write(&probe, b"")
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| ConfigError::new("output.dir", format!("{} not writable: {e}", dir.display())))
}

fn out_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureRecord {
    pub t: Option<f64>,
    pub error: String,
    pub state: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterValue {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// The element-wise condition evaluated on the gains the true parameters
/// produce over the sampling grid, against the sample-set median `G0`.
#[derive(Debug, Clone, Serialize)]
pub struct ElementwiseSummary {
    pub g0: Vec<Vec<f64>>,
    pub grid_points: usize,
    #[serde(flatten)]
    pub report: ElementwiseConditionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditSummary {
    pub violation_count: usize,
    #[serde(flatten)]
    pub report: AuditReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub comment: Option<String>,
    pub plant: String,
    pub seed: u64,
    pub dt: f64,
    pub horizon: f64,
    pub rows: usize,
    pub smoothing: bool,
    pub status: &'static str,
    pub failure: Option<FailureRecord>,
    pub converged: bool,
    pub true_parameters: Vec<ParameterValue>,
    pub within_declared_bounds: bool,
    pub metrics: Option<Metrics>,
    pub admissibility: AdmissibilityReport,
    pub elementwise_condition: Option<ElementwiseSummary>,
    pub audit: Option<AuditSummary>,
    pub audit_violations: usize,
    pub wall_time_s: f64,
}

fn elementwise_summary(
    plant: &dyn Plant,
    cfg: &ExperimentConfig,
) -> Result<ElementwiseSummary, String> {
    let samples = &cfg.decompose.samples;
    let (gains, _) = plant_gain_samples(plant, samples).map_err(|e| e.to_string())?;
    let g0 = nominal_gain(&gains).map_err(|e| e.to_string())?;
    let truth = plant.true_uncertain_values();
    let grid = state_grid(plant.grid_dim(), &samples.grid);
    let case: Vec<Matrix> = grid
        .iter()
        .map(|g| plant.gain_at(&truth, g))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let report = elementwise_condition(&g0, &case).map_err(|e| e.to_string())?;
    Ok(ElementwiseSummary {
        g0: crate::sign::matrix_to_rows(&g0),
        grid_points: grid.len(),
        report,
    })
}

pub struct RunOutput {
    pub code: i32,
    pub summary: RunSummary,
    pub trajectory: Trajectory,
}

/// One closed-loop run; the config must already be validated for `seed`.
pub fn simulate_once(cfg: &ExperimentConfig, raw: &Value, seed: u64) -> Result<RunOutput, ConfigError> {
    let started = Instant::now();
    let ctrl = cfg.controller_config()?;
    let plant = cfg.plant(seed)?;
    let sim = cfg.sim_settings(seed)?;
    let bands = cfg.metrics.bands.clone().unwrap_or_else(|| plant.default_bands());

    let (trajectory, failure) = match run_closed_loop(plant.as_ref(), &ctrl, &sim) {
        Ok(t) => (t, None),
        Err(f) => {
            let t = match &f.error {
                crate::sim::SimError::SolverFailure { t, .. } => Some(*t),
                _ => f.partial.rows.last().map(|r| r.t),
            };
            let rec = FailureRecord {
                t,
                error: f.error.to_string(),
                state: f.state.as_ref().map(|s| s.as_slice().to_vec()),
            };
            (f.partial, Some(rec))
        }
    };

    let metrics = (!trajectory.rows.is_empty())
        .then(|| compute_metrics(&trajectory, &bands, cfg.tail_start()));
    let audit = (sim.lyapunov_audit && !trajectory.rows.is_empty()).then(|| {
        let report = lyapunov_audit(&trajectory, ctrl.rho, sim.audit_boundary, plant.within_declared_bounds());
        AuditSummary {
            violation_count: report.violations.len(),
            report,
        }
    });
    let elementwise = match elementwise_summary(plant.as_ref(), cfg) {
        Ok(s) => Some(s),
        Err(e) => {
            warn!("element-wise condition not evaluated: {e}");
            None
        }
    };
    let admissibility = check_admissibility(ctrl.decomposition.f_bar())
        .map_err(|e| ConfigError::new("controller.decomposition.f_bar", e.to_string()))?;
    let true_parameters = plant
        .uncertainty_box()
        .into_iter()
        .zip(plant.true_uncertain_values())
        .map(|((name, lo, hi), value)| ParameterValue { name, value, lo, hi })
        .collect();

    let code = if failure.is_some() { EXIT_RUNTIME } else { EXIT_OK };
    let summary = RunSummary {
        config_hash: config_hash(raw),
        comment: cfg.comment.clone(),
        plant: plant.kind().to_string(),
        seed,
        dt: sim.dt,
        horizon: sim.horizon,
        rows: trajectory.rows.len(),
        smoothing: ctrl.smoothing,
        status: if failure.is_some() { "runtime_failure" } else { "ok" },
        converged: failure.is_none() && metrics.as_ref().is_some_and(|m| m.converged),
        failure,
        true_parameters,
        within_declared_bounds: plant.within_declared_bounds(),
        audit_violations: audit.as_ref().map_or(0, |a| a.violation_count),
        metrics,
        admissibility,
        elementwise_condition: elementwise,
        audit,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        code,
        summary,
        trajectory,
    })
}

fn file_names(seed: u64, batch: bool) -> (String, String) {
    if batch {
        (format!("trajectory_seed{seed}.csv"), format!("summary_seed{seed}.json"))
    } else {
        ("trajectory.csv".into(), "summary.json".into())
    }
}

fn write_run(dir: &Path, out: &RunOutput, batch: bool) -> std::io::Result<()> {
    let (csv, json) = file_names(out.summary.seed, batch);
    let mut buf = Vec::new();
    out.trajectory.write_csv(&mut buf)?;
    write_atomic(&dir.join(csv), &buf)?;
    write_json(&dir.join(json), &out.summary)
}

#[derive(Debug, Serialize)]
struct BatchSummary<'a> {
    config_hash: String,
    seeds: Vec<u64>,
    converged: usize,
    runtime_failures: usize,
    audit_violations: usize,
    runs: Vec<BatchEntry<'a>>,
}

#[derive(Debug, Serialize)]
struct BatchEntry<'a> {
    seed: u64,
    status: &'a str,
    converged: bool,
    audit_violations: usize,
}

pub fn cmd_simulate(config: &Path, seed: Option<u64>, out: Option<&Path>, trials: usize) -> i32 {
    let (cfg, raw) = match ExperimentConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            eprintln!("validation error: {e}");
            return EXIT_INVALID;
        }
    };
    let first = seed.unwrap_or(cfg.sim.seed);
    let trials = trials.max(1);
    let seeds: Vec<u64> = (0..trials as u64).map(|i| first + i).collect();
    let dir = out_dir(out, &cfg);
    let checked = seeds
        .iter()
        .try_for_each(|&s| cfg.validate(s))
        .and_then(|_| ensure_dir(&dir));
    if let Err(e) = checked {
        error!("{e}");
        eprintln!("validation error: {e}");
        return EXIT_INVALID;
    }

    let batch = trials > 1;
    let results: Vec<Result<RunOutput, ConfigError>> = seeds
        .par_iter()
        .map(|&s| {
            let r = simulate_once(&cfg, &raw, s)?;
            write_run(&dir, &r, batch).map_err(|e| ConfigError::new("output.dir", e.to_string()))?;
            Ok(r)
        })
        .collect();

    let mut code = EXIT_OK;
    let mut entries = Vec::new();
    for r in &results {
        match r {
            Ok(run) => {
                let s = &run.summary;
                info!(
                    "seed {}: {} converged={} audit_violations={} ({:.3} s)",
                    s.seed, s.status, s.converged, s.audit_violations, s.wall_time_s
                );
                if let Some(f) = &s.failure {
                    eprintln!("runtime failure (seed {}): {}", s.seed, f.error);
                }
                code = code.max(run.code);
                entries.push(BatchEntry {
                    seed: s.seed,
                    status: s.status,
                    converged: s.converged,
                    audit_violations: s.audit_violations,
                });
            }
            Err(e) => {
                eprintln!("error: {e}");
                code = code.max(EXIT_RUNTIME);
            }
        }
    }
    if batch {
        let summary = BatchSummary {
            config_hash: config_hash(&raw),
            seeds: seeds.clone(),
            converged: entries.iter().filter(|e| e.converged).count(),
            runtime_failures: entries.iter().filter(|e| e.status != "ok").count(),
            audit_violations: entries.iter().map(|e| e.audit_violations).sum(),
            runs: entries,
        };
        if let Err(e) = write_json(&dir.join("batch.json"), &summary) {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    }
    code
}

/// Parses a matrix given as JSON rows, e.g. `[[1.2, 0.3], [0.3, 1.2]]`.
pub fn parse_matrix(text: &str) -> Result<Matrix, String> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let m = matrix_from_rows(&rows).ok_or("rows must have equal length")?;
    if m.nrows() != m.ncols() || m.nrows() == 0 || m.nrows() > 6 {
        return Err("must be square with dimension 1..=6".into());
    }
    if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err("entries must be finite and >= 0".into());
    }
    Ok(m)
}

pub fn certify_report(
    suite: &str,
    seed: u64,
    trials: usize,
    inject: Option<&str>,
) -> Result<SuiteReport, ConfigError> {
    let s = *suite_registry()
        .get(suite)
        .map_err(|e| ConfigError::new("--suite", e.to_string()))?;
    let mut opts = CertifyOptions::new(seed, trials);
    if let Some(text) = inject {
        opts.inject_f_bar = Some(parse_matrix(text).map_err(|e| ConfigError::new("--inject-f-bar", e))?);
    }
    Ok(run_suite(s, &opts))
}

pub fn cmd_certify(suite: &str, seed: u64, trials: usize, inject: Option<&str>, out: Option<&Path>) -> i32 {
    let report = match certify_report(suite, seed, trials, inject) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("validation error: {e}");
            return EXIT_INVALID;
        }
    };
    println!(
        "{}: trials={} checks={} failures={} verified_instances={}",
        report.suite, report.trials, report.checks, report.failures, report.verified_instances
    );
    if let Some(dir) = out {
        let written = ensure_dir(dir)
            .map_err(|e| e.to_string())
            .and_then(|_| {
                write_json(&dir.join(format!("certify_{}.json", report.suite)), &report)
                    .map_err(|e| e.to_string())
            });
        if let Err(e) = written {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    }
    if report.passed() {
        EXIT_OK
    } else {
        if let Some(c) = report.counterexamples.first() {
            eprintln!("counterexample: {c}");
        }
        EXIT_FAILED
    }
}

#[derive(Debug, Serialize)]
pub struct DecomposeOutput {
    pub config_hash: String,
    pub plant: String,
    #[serde(flatten)]
    pub report: DecompositionReport,
    pub certifiable: bool,
    pub wall_time_s: f64,
}

pub fn decompose(cfg: &ExperimentConfig, raw: &Value, seed: Option<u64>) -> Result<DecomposeOutput, (i32, String)> {
    let started = Instant::now();
    let invalid = |e: String| (EXIT_INVALID, e);
    let plant = cfg.plant(cfg.sim.seed).map_err(|e| invalid(e.to_string()))?;
    let mut pso = cfg.decompose.pso.clone();
    if let Some(s) = seed {
        pso.seed = s;
    }
    pso.validate().map_err(|e| invalid(e.to_string()))?;
    let (gains, provenance) =
        plant_gain_samples(plant.as_ref(), &cfg.decompose.samples).map_err(|e| invalid(e.to_string()))?;
    let set = UncertaintySampleSet::from_gains(&gains, provenance.note.clone())
        .map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
    let outcome = pso_search(&set, &pso).map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
    let report = DecompositionReport::new(&outcome, &set.g0, &pso, provenance)
        .map_err(|e| (EXIT_RUNTIME, e.to_string()))?;
    Ok(DecomposeOutput {
        config_hash: config_hash(raw),
        plant: plant.kind().to_string(),
        certifiable: report.two_norm < 1.0,
        report,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

pub fn cmd_decompose(config: &Path, seed: Option<u64>, out: Option<&Path>) -> i32 {
    let (cfg, raw) = match ExperimentConfig::from_path(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("validation error: {e}");
            return EXIT_INVALID;
        }
    };
    let dir = out_dir(out, &cfg);
    if let Err(e) = ensure_dir(&dir) {
        eprintln!("validation error: {e}");
        return EXIT_INVALID;
    }
    let result = match decompose(&cfg, &raw, seed) {
        Ok(r) => r,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            return code;
        }
    };
    println!(
        "{}: two_norm={} strategy={} evaluations={} ({:.2} s)",
        result.plant, result.report.two_norm, result.report.strategy, result.report.evaluations, result.wall_time_s
    );
    if let Err(e) = write_json(&dir.join("decomposition.json"), &result) {
        eprintln!("error: {e}");
        return EXIT_RUNTIME;
    }
    if result.certifiable {
        EXIT_OK
    } else {
        eprintln!("best two-norm {} >= 1: plant not certifiable by this search", result.report.two_norm);
        EXIT_NOT_CERTIFIABLE
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn matrix_flag_parsing() {
        assert_eq!(parse_matrix("[[1.2, 0.3], [0.3, 1.2]]").unwrap()[(0, 1)], 0.3);
        assert!(parse_matrix("[[1, 2], [3]]").is_err());
        assert!(parse_matrix("[[-1]]").is_err());
        assert!(parse_matrix("[[1, 2]]").is_err());
    }

    #[test]
    fn unknown_suite_is_a_validation_error() {
        assert_eq!(cmd_certify("nope", 0, 1, None, None), EXIT_INVALID);
    }
}
