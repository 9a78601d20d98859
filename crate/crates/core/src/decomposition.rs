//! Upper-bound estimation for the normalized gain uncertainty and particle
//! swarm search over factorizations `G0 = M Q`.

use std::sync::OnceLock;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{check_admissibility, AdmissibilityReport, GainDecomposition};
use crate::plants::{Plant, PlantError};
use crate::registry::Registry;
use crate::sign::{
    condition_number, induced_norm, lu_inverse, matrix_max_abs, matrix_to_rows, Matrix, NormKind,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecompositionError {
    #[error("M Q differs from G0 by {mismatch} (relative)")]
    DecompositionMismatch { mismatch: f64 },
    #[error("factor {0} is singular")]
    SingularFactor(&'static str),
    #[error("every particle was ill-conditioned")]
    AllParticlesInfeasible,
    #[error("sample set is empty")]
    EmptySamples,
    #[error("sample shapes differ")]
    Shape,
    #[error("{field}: {reason}")]
    InvalidSetting { field: &'static str, reason: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Nominal gain with sampled deviations `ΔG = G − G0`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySampleSet {
    pub g0: Matrix,
    pub deltas: Vec<Matrix>,
    pub provenance: String,
}

impl UncertaintySampleSet {
    pub fn new(
        g0: Matrix,
        deltas: Vec<Matrix>,
        provenance: impl Into<String>,
    ) -> Result<Self, DecompositionError> {
        if deltas.is_empty() {
            return Err(DecompositionError::EmptySamples);
        }
        let n = g0.nrows();
        if g0.ncols() != n
            || deltas.iter().any(|d| d.shape() != (n, n))
            || !g0.iter().chain(deltas.iter().flatten()).all(|x| x.is_finite())
        {
            return Err(DecompositionError::Shape);
        }
        Ok(Self {
            g0,
            deltas,
            provenance: provenance.into(),
        })
    }

    /// Median nominal with deviations of each sample from it.
    pub fn from_gains(gains: &[Matrix], provenance: impl Into<String>) -> Result<Self, DecompositionError> {
        let g0 = nominal_gain(gains)?;
        let deltas = gains.iter().map(|g| g - &g0).collect();
        Self::new(g0, deltas, provenance)
    }

    pub fn gains(&self) -> Vec<Matrix> {
        self.deltas.iter().map(|d| d + &self.g0).collect()
    }
}

/// Element-wise median; the mean of the two middle values for even counts.
pub fn nominal_gain(samples: &[Matrix]) -> Result<Matrix, DecompositionError> {
    let first = samples.first().ok_or(DecompositionError::EmptySamples)?;
    if samples.iter().any(|s| s.shape() != first.shape()) {
        return Err(DecompositionError::Shape);
    }
    let n = samples.len();
    Ok(Matrix::from_fn(first.nrows(), first.ncols(), |i, j| {
        let mut v: Vec<f64> = samples.iter().map(|s| s[(i, j)]).collect();
        v.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }))
}

/// Element-wise max over samples of `|M⁻¹ ΔG Q⁻¹|`.
pub fn ubm_from_samples(
    m: &Matrix,
    q: &Matrix,
    samples: &UncertaintySampleSet,
) -> Result<Matrix, DecompositionError> {
    let mq = m * q;
    let scale = matrix_max_abs(&samples.g0).max(f64::MIN_POSITIVE);
    let mismatch = matrix_max_abs(&(&mq - &samples.g0)) / scale;
    if !(mismatch <= 1e-8) {
        return Err(DecompositionError::DecompositionMismatch { mismatch });
    }
    let m_inv = lu_inverse(m).ok_or(DecompositionError::SingularFactor("M"))?;
    let q_inv = lu_inverse(q).ok_or(DecompositionError::SingularFactor("Q"))?;
    Ok(ubm_with_inverses(&m_inv, &q_inv, &samples.deltas))
}

fn ubm_with_inverses(m_inv: &Matrix, q_inv: &Matrix, deltas: &[Matrix]) -> Matrix {
    let n = m_inv.nrows();
    deltas.iter().fold(Matrix::zeros(n, n), |acc, d| {
        acc.zip_map(&(m_inv * d * q_inv), |a, f| a.max(f.abs()))
    })
}

fn default_draws() -> usize {
    200
}

fn default_grid() -> Vec<f64> {
    vec![-0.05, 0.0, 0.05]
}

/// Parameter corners plus uniform interior draws, each evaluated on a grid of
/// state coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSettings {
    #[serde(default = "default_draws")]
    pub draws: usize,
    /// Offsets applied to each gain-relevant state coordinate.
    #[serde(default = "default_grid")]
    pub grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            grid: default_grid(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleProvenance {
    pub parameters: Vec<(String, f64, f64)>,
    pub corners: usize,
    pub draws: usize,
    pub grid: Vec<f64>,
    pub grid_points: usize,
    pub gains: usize,
    pub note: String,
}

/// Cartesian product of `grid` with itself, `dim` times.
pub fn state_grid(dim: usize, grid: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.len().pow(dim as u32))
        .map(|mut idx| {
            (0..dim)
                .map(|_| {
                    let v = grid[idx % grid.len()];
                    idx /= grid.len();
                    v
                })
                .collect()
        })
        .collect()
}

/// Gain samples over the plant's uncertainty box.
pub fn plant_gain_samples(
    plant: &dyn Plant,
    settings: &SampleSettings,
) -> Result<(Vec<Matrix>, SampleProvenance), DecompositionError> {
    if settings.grid.is_empty() {
        return Err(DecompositionError::InvalidSetting {
            field: "decompose.samples.grid",
            reason: "must not be empty".into(),
        });
    }
    let bx = plant.uncertainty_box();
    let r = bx.len();
    let mut points: Vec<Vec<f64>> = (0..1usize << r)
        .map(|c| {
            bx.iter()
                .enumerate()
                .map(|(i, (_, lo, hi))| if c >> i & 1 == 1 { *hi } else { *lo })
                .collect()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    for _ in 0..settings.draws {
        points.push(
            bx.iter()
                .map(|(_, lo, hi)| if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo })
                .collect(),
        );
    }
    let grid_points = state_grid(plant.grid_dim(), &settings.grid);
    let mut gains = Vec::with_capacity(points.len() * grid_points.len());
    for p in &points {
        for g in &grid_points {
            gains.push(plant.gain_at(p, g)?);
        }
    }
    let provenance = SampleProvenance {
        parameters: bx,
        corners: 1 << r,
        draws: settings.draws,
        grid: settings.grid.clone(),
        grid_points: grid_points.len(),
        gains: gains.len(),
        note: "F̄ certifies only the sampled gains; states and parameters between samples are not covered".into(),
    };
    Ok((gains, provenance))
}

fn default_swarm() -> usize {
    50
}
fn default_iterations() -> usize {
    200
}
fn default_inertia() -> f64 {
    0.72
}
fn default_accel() -> f64 {
    1.49
}
fn default_restarts() -> usize {
    1
}
fn default_max_cond() -> f64 {
    1e6
}
fn default_polish() -> usize {
    4000
}
fn default_strategy() -> String {
    "fixed-nominal".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoSettings {
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default = "default_swarm")]
    pub swarm_size: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_inertia")]
    pub inertia: f64,
    #[serde(default = "default_accel")]
    pub cognitive: f64,
    #[serde(default = "default_accel")]
    pub social: f64,
    /// Half-width of the search box; strategy-specific default when absent.
    #[serde(default)]
    pub bound: Option<f64>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_cond")]
    pub max_condition: f64,
    /// Nelder-Mead iterations per polish round after each restart; 0 disables.
    #[serde(default = "default_polish")]
    pub polish_iters: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PsoSettings {
    fn default() -> Self {
        Self {
            strategy: default_strategy(),
            swarm_size: default_swarm(),
            iterations: default_iterations(),
            inertia: default_inertia(),
            cognitive: default_accel(),
            social: default_accel(),
            bound: None,
            restarts: default_restarts(),
            max_condition: default_max_cond(),
            polish_iters: default_polish(),
            seed: 0,
        }
    }
}

impl PsoSettings {
    pub fn validate(&self) -> Result<(), DecompositionError> {
        let bad = |field, reason: &str| {
            Err(DecompositionError::InvalidSetting {
                field,
                reason: reason.into(),
            })
        };
        if self.swarm_size < 2 {
            return bad("decompose.pso.swarm_size", "must be >= 2");
        }
        if !(self.inertia > 0.0 && self.inertia < 1.0) {
            return bad("decompose.pso.inertia", "must lie in (0, 1)");
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0) {
            return bad("decompose.pso.cognitive", "acceleration weights must be >= 0");
        }
        if self.restarts == 0 {
            return bad("decompose.pso.restarts", "must be >= 1");
        }
        if let Some(b) = self.bound {
            if !(b.is_finite() && b > 0.0) {
                return bad("decompose.pso.bound", "must be > 0");
            }
        }
        if !(self.max_condition > 1.0) {
            return bad("decompose.pso.max_condition", "must be > 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrivialScores {
    /// `M = G0, Q = I`.
    pub m_is_g0: f64,
    /// `M = I, Q = G0`.
    pub m_is_identity: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub m: Matrix,
    pub q: Matrix,
    pub g0: Matrix,
    pub f_bar: Matrix,
    pub fitness: f64,
    pub trace: Vec<f64>,
    pub trivial: TrivialScores,
    pub evaluations: usize,
}

/// A way of parameterizing the factor pair for the swarm.
pub trait DecompositionStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// Search-space dimension for `m x m` gains.
    fn dim(&self, m: usize) -> usize;

    fn default_bound(&self, g0: &Matrix) -> f64;

    /// Factor pair for a particle position, `None` if ill-conditioned.
    fn factors(&self, x: &[f64], g0: &Matrix, max_cond: f64) -> Option<(Matrix, Matrix)>;

    /// Positions of `(M, Q) = (G0, I)` and `(I, G0)`.
    fn trivial_positions(&self, g0: &Matrix) -> [Vec<f64>; 2];
}

fn well_conditioned(a: &Matrix, max_cond: f64) -> bool {
    condition_number(a) <= max_cond
}

fn to_position(parts: &[&Matrix]) -> Vec<f64> {
    parts
        .iter()
        .flat_map(|a| a.transpose().iter().copied().collect::<Vec<_>>())
        .collect()
}

fn from_position(x: &[f64], m: usize) -> Matrix {
    Matrix::from_row_slice(m, m, x)
}

/// Searches `M` with `Q = M⁻¹ G0` for the median `G0`.
struct FixedNominal;

impl DecompositionStrategy for FixedNominal {
    fn name(&self) -> &'static str {
        "fixed-nominal"
    }

    fn dim(&self, m: usize) -> usize {
        m * m
    }

    fn default_bound(&self, g0: &Matrix) -> f64 {
        10.0 * matrix_max_abs(g0)
    }

    fn factors(&self, x: &[f64], g0: &Matrix, max_cond: f64) -> Option<(Matrix, Matrix)> {
        let m = from_position(x, g0.nrows());
        if !well_conditioned(&m, max_cond) {
            return None;
        }
        let q = lu_inverse(&m)? * g0;
        Some((m, q))
    }

    fn trivial_positions(&self, g0: &Matrix) -> [Vec<f64>; 2] {
        let id = Matrix::identity(g0.nrows(), g0.nrows());
        [to_position(&[g0]), to_position(&[&id])]
    }
}

/// Searches `M` and `Q` together and takes `G0 = M Q` as the nominal.
struct Joint;

impl DecompositionStrategy for Joint {
    fn name(&self) -> &'static str {
        "joint"
    }

    fn dim(&self, m: usize) -> usize {
        2 * m * m
    }

    fn default_bound(&self, g0: &Matrix) -> f64 {
        3.0 * matrix_max_abs(g0).sqrt()
    }

    fn factors(&self, x: &[f64], g0: &Matrix, max_cond: f64) -> Option<(Matrix, Matrix)> {
        let n = g0.nrows();
        let m = from_position(&x[..n * n], n);
        let q = from_position(&x[n * n..], n);
        (well_conditioned(&m, max_cond) && well_conditioned(&q, max_cond)).then_some((m, q))
    }

    fn trivial_positions(&self, g0: &Matrix) -> [Vec<f64>; 2] {
        let id = Matrix::identity(g0.nrows(), g0.nrows());
        [to_position(&[g0, &id]), to_position(&[&id, g0])]
    }
}

pub fn strategy_registry() -> &'static Registry<&'static dyn DecompositionStrategy> {
    static REG: OnceLock<Registry<&'static dyn DecompositionStrategy>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::new("decomposition strategy")
            .with("fixed-nominal", &FixedNominal as &'static dyn DecompositionStrategy)
            .with("joint", &Joint)
    })
}

/// Fitness of a factor pair against raw gains: `‖max |M⁻¹ (G − M Q) Q⁻¹|‖₂`.
pub fn pair_fitness(m: &Matrix, q: &Matrix, gains: &[Matrix]) -> Option<(f64, Matrix)> {
    let n = m.nrows();
    let a = lu_inverse(m)?;
    let b = lu_inverse(q)?;
    let mut f_bar = Matrix::zeros(n, n);
    let mut gb = vec![0.0; n * n];
    // M⁻¹ (G − M Q) Q⁻¹ = M⁻¹ G Q⁻¹ − I, evaluated without allocating per sample
    for g in gains {
        for i in 0..n {
            for j in 0..n {
                gb[i * n + j] = (0..n).map(|k| g[(i, k)] * b[(k, j)]).sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut f: f64 = (0..n).map(|k| a[(i, k)] * gb[k * n + j]).sum();
                if i == j {
                    f -= 1.0;
                }
                f_bar[(i, j)] = f_bar[(i, j)].max(f.abs());
            }
        }
    }
    let norm = induced_norm(&f_bar, NormKind::Two).ok()?;
    norm.is_finite().then_some((norm, f_bar))
}

struct Swarm<'a> {
    strategy: &'a dyn DecompositionStrategy,
    g0: &'a Matrix,
    gains: &'a [Matrix],
    max_cond: f64,
}

impl Swarm<'_> {
    fn fitness(&self, x: &[f64]) -> f64 {
        self.strategy
            .factors(x, self.g0, self.max_cond)
            .and_then(|(m, q)| pair_fitness(&m, &q, self.gains))
            .map_or(f64::INFINITY, |(f, _)| f)
    }

    fn fitness_all(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.par_iter().map(|x| self.fitness(x)).collect()
    }
}

struct Objective<'a, 'b>(&'a Swarm<'b>);

impl CostFunction for Objective<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.0.fitness(x))
    }
}

const POLISH_ROUNDS: usize = 3;

/// Nelder-Mead from `x0`, restarted with a fresh simplex a few times since the
/// fitness is a max over samples and the simplex tends to collapse on kinks.
fn polish(swarm: &Swarm, x0: &[f64], f0: f64, budget: usize) -> (Vec<f64>, f64, usize) {
    let (mut x, mut f) = (x0.to_vec(), f0);
    let mut used = 0;
    if !f0.is_finite() {
        return (x, f, used);
    }
    for _ in 0..POLISH_ROUNDS {
        let mut simplex = vec![x.clone()];
        for k in 0..x.len() {
            let mut y = x.clone();
            y[k] += if y[k].abs() > 1e-8 { 0.05 * y[k] } else { 2.5e-4 };
            simplex.push(y);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-12)
            .expect("tolerance is positive");
        let run = Executor::new(Objective(swarm), solver)
            .configure(|st| st.max_iters(budget as u64))
            .run();
        let Ok(res) = run else { break };
        let st = res.state();
        used += st.get_func_counts().values().sum::<u64>() as usize;
        match st.get_best_param() {
            Some(bx) if st.get_best_cost() < f => {
                x = bx.clone();
                f = st.get_best_cost();
            }
            _ => break,
        }
    }
    (x, f, used)
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Particle swarm over the strategy's search space, seeded with the trivial
/// decompositions. Deterministic for a given seed regardless of thread count.
pub fn pso_search(
    samples: &UncertaintySampleSet,
    settings: &PsoSettings,
) -> Result<SearchOutcome, DecompositionError> {
    settings.validate()?;
    let strategy = *strategy_registry()
        .get(&settings.strategy)
        .map_err(|e| DecompositionError::InvalidSetting {
            field: "decompose.pso.strategy",
            reason: e.to_string(),
        })?;
    let n = samples.g0.nrows();
    if n > 8 {
        return Err(DecompositionError::InvalidSetting {
            field: "decompose",
            reason: "gain dimension must be <= 8".into(),
        });
    }
    let gains = samples.gains();
    let swarm = Swarm {
        strategy,
        g0: &samples.g0,
        gains: &gains,
        max_cond: settings.max_condition,
    };
    let d = strategy.dim(n);
    let bound = settings.bound.unwrap_or_else(|| strategy.default_bound(&samples.g0));
    let vmax = 0.2 * bound;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let trivial = strategy.trivial_positions(&samples.g0);
    let trivial_fit = swarm.fitness_all(&trivial);
    let mut best_fit = trivial_fit[0].min(trivial_fit[1]);
    let mut best_x = trivial[argmin(&trivial_fit)].clone();
    let mut trace = vec![best_fit];
    let mut evaluations = 2;

    for _ in 0..settings.restarts {
        let mut xs: Vec<Vec<f64>> = (0..settings.swarm_size)
            .map(|_| (0..d).map(|_| rng.gen_range(-bound..=bound)).collect())
            .collect();
        let mut vs = vec![vec![0.0; d]; settings.swarm_size];
        let mut fit = swarm.fitness_all(&xs);
        evaluations += xs.len();
        let mut pbest = xs.clone();
        let mut pfit = fit.clone();
        for _ in 0..settings.iterations {
            let g = argmin(&pfit);
            if pfit[g] < best_fit {
                best_fit = pfit[g];
                best_x = pbest[g].clone();
            }
            let gbest = pbest[g].clone();
            for ((x, v), p) in xs.iter_mut().zip(vs.iter_mut()).zip(&pbest) {
                for k in 0..d {
                    let r1: f64 = rng.gen();
                    let r2: f64 = rng.gen();
                    v[k] = settings.inertia * v[k]
                        + settings.cognitive * r1 * (p[k] - x[k])
                        + settings.social * r2 * (gbest[k] - x[k]);
                    v[k] = v[k].clamp(-vmax, vmax);
                    x[k] = (x[k] + v[k]).clamp(-bound, bound);
                }
            }
            fit = swarm.fitness_all(&xs);
            evaluations += xs.len();
            for i in 0..xs.len() {
                if fit[i] < pfit[i] {
                    pfit[i] = fit[i];
                    pbest[i] = xs[i].clone();
                }
            }
            let g = argmin(&pfit);
            if pfit[g] < best_fit {
                best_fit = pfit[g];
                best_x = pbest[g].clone();
            }
            trace.push(best_fit);
        }
        if settings.polish_iters > 0 {
            let g = argmin(&pfit);
            let (x, f, used) = polish(&swarm, &pbest[g], pfit[g], settings.polish_iters);
            evaluations += used;
            if f < best_fit {
                best_fit = f;
                best_x = x;
            }
            trace.push(best_fit);
        }
    }

    if !best_fit.is_finite() {
        return Err(DecompositionError::AllParticlesInfeasible);
    }
    let (m, q) = strategy
        .factors(&best_x, &samples.g0, settings.max_condition)
        .ok_or(DecompositionError::AllParticlesInfeasible)?;
    let (fitness, f_bar) =
        pair_fitness(&m, &q, &gains).ok_or(DecompositionError::AllParticlesInfeasible)?;
    Ok(SearchOutcome {
        g0: &m * &q,
        m,
        q,
        f_bar,
        fitness,
        trace,
        trivial: TrivialScores {
            m_is_g0: trivial_fit[0],
            m_is_identity: trivial_fit[1],
        },
        evaluations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub strategy: String,
    pub m: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub g0: Vec<Vec<f64>>,
    pub median_g0: Vec<Vec<f64>>,
    pub f_bar: Vec<Vec<f64>>,
    pub two_norm: f64,
    pub admissibility: AdmissibilityReport,
    pub trivial: TrivialScores,
    pub fitness_trace: Vec<f64>,
    pub evaluations: usize,
    pub settings: PsoSettings,
    pub samples: SampleProvenance,
}

impl DecompositionReport {
    pub fn new(
        outcome: &SearchOutcome,
        median_g0: &Matrix,
        settings: &PsoSettings,
        samples: SampleProvenance,
    ) -> Result<Self, DecompositionError> {
        let admissibility = check_admissibility(&outcome.f_bar).map_err(|e| {
            DecompositionError::InvalidSetting {
                field: "decompose",
                reason: e.to_string(),
            }
        })?;
        Ok(Self {
            strategy: settings.strategy.clone(),
            m: matrix_to_rows(&outcome.m),
            q: matrix_to_rows(&outcome.q),
            g0: matrix_to_rows(&outcome.g0),
            median_g0: matrix_to_rows(median_g0),
            f_bar: matrix_to_rows(&outcome.f_bar),
            two_norm: outcome.fitness,
            admissibility,
            trivial: outcome.trivial.clone(),
            fitness_trace: outcome.trace.clone(),
            evaluations: outcome.evaluations,
            settings: settings.clone(),
            samples,
        })
    }
}

/// Convenience: the search result as a controller decomposition.
pub fn to_gain_decomposition(outcome: &SearchOutcome) -> Option<GainDecomposition> {
    GainDecomposition::new(outcome.m.clone(), outcome.q.clone(), outcome.f_bar.clone()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest};

    fn m2(xs: [f64; 4]) -> Matrix {
        Matrix::from_row_slice(2, 2, &xs)
    }

    #[test]
    fn median_examples() {
        let a = m2([1.0, -2.0, 3.0, 0.5]);
        assert_eq!(nominal_gain(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
        assert_eq!(nominal_gain(&[Matrix::zeros(2, 2), &a * 2.0]).unwrap(), a);
        assert!(matches!(nominal_gain(&[]), Err(DecompositionError::EmptySamples)));
    }

    #[test]
    fn ubm_examples() {
        let g0 = m2([2.0, 1.0, 0.0, 1.0]);
        let zero = UncertaintySampleSet::new(g0.clone(), vec![Matrix::zeros(2, 2)], "zero").unwrap();
        let id = Matrix::identity(2, 2);
        assert_eq!(ubm_from_samples(&g0, &id, &zero).unwrap(), Matrix::zeros(2, 2));
        let half = UncertaintySampleSet::new(g0.clone(), vec![&g0 * 0.5], "half").unwrap();
        let f = ubm_from_samples(&g0, &id, &half).unwrap();
        assert_relative_eq!(f, &id * 0.5, epsilon = 1e-15);
        assert!(matches!(
            ubm_from_samples(&id, &id, &half),
            Err(DecompositionError::DecompositionMismatch { .. })
        ));
    }

    #[test]
    fn ubm_symmetric_in_delta_sign() {
        let g0 = m2([1.0, 0.2, -0.3, 0.8]);
        let d = m2([0.1, -0.05, 0.02, 0.07]);
        let id = Matrix::identity(2, 2);
        let plus = UncertaintySampleSet::new(g0.clone(), vec![d.clone()], "+").unwrap();
        let minus = UncertaintySampleSet::new(g0.clone(), vec![-d], "-").unwrap();
        assert_eq!(
            ubm_from_samples(&g0, &id, &plus).unwrap(),
            ubm_from_samples(&g0, &id, &minus).unwrap()
        );
    }

    #[test]
    fn zero_deltas_give_zero_fitness() {
        let g0 = m2([1.0, 0.2, -0.3, 0.8]);
        let set = UncertaintySampleSet::new(g0, vec![Matrix::zeros(2, 2); 3], "zero").unwrap();
        for strategy in ["fixed-nominal", "joint"] {
            let settings = PsoSettings {
                strategy: strategy.into(),
                iterations: 20,
                ..Default::default()
            };
            let out = pso_search(&set, &settings).unwrap();
            assert!(out.fitness <= 1e-9, "{strategy}: {}", out.fitness);
        }
    }

    fn noisy_set(seed: u64) -> UncertaintySampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g0 = m2([1.0, 0.6, -0.4, 0.9]);
        let deltas = (0..30)
            .map(|_| Matrix::from_fn(2, 2, |_, _| rng.gen_range(-0.3..0.3)))
            .collect();
        UncertaintySampleSet::new(g0, deltas, "random").unwrap()
    }

    #[test]
    fn search_is_deterministic_and_monotone() {
        let set = noisy_set(1);
        let settings = PsoSettings {
            iterations: 40,
            seed: 5,
            ..Default::default()
        };
        let a = pso_search(&set, &settings).unwrap();
        let b = pso_search(&set, &settings).unwrap();
        assert_eq!(a.m, b.m);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(a.fitness <= a.trivial.m_is_g0.min(a.trivial.m_is_identity));
        let mq = &a.m * &a.q;
        assert!(matrix_max_abs(&(mq - &set.g0)) <= 1e-8 * matrix_max_abs(&set.g0));
        assert!(a.f_bar.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn settings_validation() {
        let bad = PsoSettings {
            swarm_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PsoSettings {
            inertia: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PsoSettings {
            strategy: "annealing".into(),
            ..Default::default()
        };
        assert!(matches!(
            pso_search(&noisy_set(0), &bad),
            Err(DecompositionError::InvalidSetting { .. })
        ));
    }

    proptest! {
        #[test]
        fn ubm_monotone_in_sample_set(seed in 0u64..1000, extra in 1usize..5) {
            let set = noisy_set(seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let mut bigger = set.clone();
            for _ in 0..extra {
                bigger.deltas.push(Matrix::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5)));
            }
            let id = Matrix::identity(2, 2);
            let a = ubm_from_samples(&set.g0, &id, &set).unwrap();
            let b = ubm_from_samples(&set.g0, &id, &bigger).unwrap();
            prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| y >= x));
        }
    }
}
