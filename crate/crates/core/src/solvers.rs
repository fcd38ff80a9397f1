//! Row-action iterations: cyclic and randomized single-row projections, the
//! two-subspace pair step, and the equivalent oversized-step formulation.
//!
//! Every step works on unit rows. A single-row step projects the iterate onto
//! one row's solution hyperplane. The two-subspace step projects onto the
//! intersection of two row hyperplanes in one move by orthonormalizing the
//! pair, which pays off exactly when rows are strongly correlated: the second
//! projection of a naive double step would mostly undo the first.
//!
//! Solves are driven by an explicit seed through a counter-based generator,
//! so a `(system, config)` pair determines the entire iterate path bit for
//! bit, independent of the host.

use crate::linalg::{
    self, axpy, dot, norm2, norm2_sq, project_hyperplane, sub, LinalgError, LinearSystem, Matrix,
    UNIT_ROW_TOL,
};
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// |<a_r, a_s>| at or above `1 - NEAR_PARALLEL_TOL` counts as a parallel pair.
pub const NEAR_PARALLEL_TOL: f64 = 1e-12;

/// Row residual magnitude below which the oversized-step scalar is undefined.
pub const ZERO_RESIDUAL_TOL: f64 = 1e-12;

/// Gram determinant magnitude below which the pair projection is refused.
pub const SINGULAR_GRAM_TOL: f64 = 1e-14;

/// Resampling budget per iteration before a near-parallel pair degrades to a
/// single projection.
const NEAR_PARALLEL_RESAMPLES: usize = 16;

/// Rejection budget for weighted distinct-pair sampling.
const WEIGHTED_PAIR_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("pair selection needs at least two rows, got {0}")]
    DegenerateMatrix(usize),
    #[error("rows are numerically parallel (|mu| = {mu})")]
    NearParallelRows { mu: f64 },
    #[error(
        "iterate already satisfies the leading row (residual {residual:e}), step scalar undefined"
    )]
    ZeroDenominator { residual: f64 },
    #[error("pair Gram matrix is singular (1 - mu^2 = {det:e})")]
    SingularGram { det: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid sampling weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Row-selection rule driving a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Deterministic sweep through rows in order.
    Cyclic,
    /// One row per iteration, uniformly at random.
    RkUniform,
    /// One row per iteration, probability proportional to its squared norm.
    RkWeighted,
    /// A distinct pair per iteration, projected onto both hyperplanes at once.
    TwoSubspace,
    /// A distinct pair per iteration: oversized step on the first row, exact
    /// projection onto the second. Equivalent to [`Method::TwoSubspace`] when
    /// the step scalar is the optimal one.
    TwoStepEpsOpt,
}

impl Method {
    /// Rows consumed per iteration.
    pub fn rows_per_iteration(self) -> usize {
        match self {
            Method::Cyclic | Method::RkUniform | Method::RkWeighted => 1,
            Method::TwoSubspace | Method::TwoStepEpsOpt => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Cyclic => "cyclic",
            Method::RkUniform => "rk_uniform",
            Method::RkWeighted => "rk_weighted",
            Method::TwoSubspace => "two_subspace",
            Method::TwoStepEpsOpt => "two_step_eps_opt",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cyclic" => Ok(Method::Cyclic),
            "rk_uniform" => Ok(Method::RkUniform),
            "rk_weighted" => Ok(Method::RkWeighted),
            "two_subspace" => Ok(Method::TwoSubspace),
            "two_step_eps_opt" => Ok(Method::TwoStepEpsOpt),
            other => Err(format!(
                "unknown method '{other}' (expected cyclic, rk_uniform, rk_weighted, two_subspace, or two_step_eps_opt)"
            )),
        }
    }
}

/// Whether consecutive random row draws may repeat.
///
/// Pair methods always use two distinct rows within an iteration; this switch
/// only affects the single-row samplers, where forbidding an immediate repeat
/// can only help (a repeated row is a wasted projection).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    #[default]
    With,
    WithoutConsecutiveRepeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iterations: usize,
    /// Relative accuracy at which to stop early; 0 disables early stopping
    /// and runs the full budget.
    pub stop_tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub replacement: Replacement,
}

impl SolverConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        Self {
            method,
            max_iterations: 1000,
            stop_tolerance: 0.0,
            seed,
            replacement: Replacement::With,
        }
    }
}

/// Everything a single two-subspace step computes, for inspection and tests:
/// the pair correlation `mu`, the orthonormalized second direction `v` with
/// its target value `beta`, the intermediate single-projection iterate `y`,
/// and the final iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSubspaceStepTrace {
    pub mu: f64,
    pub v: Vec<f64>,
    pub beta: f64,
    pub y: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// Error and residual history of one solve.
///
/// Both histories carry `iterations_run + 1` entries, starting at the initial
/// estimate. `errors_sq` is empty when the system carries no ground-truth
/// solution. `row_touches` counts rows consumed across all iterations (two
/// per pair iteration), the honest axis for comparing single-row and pair
/// methods.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub method: Method,
    pub errors_sq: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations_run: usize,
    pub row_touches: usize,
    /// Iterations where every resampled pair stayed numerically parallel and
    /// the step degraded to a single projection.
    pub near_parallel_fallbacks: usize,
    /// Oversized-step iterations whose leading-row residual was already zero,
    /// where the step reduces to the trailing projection alone.
    pub zero_residual_fallbacks: usize,
}

impl IterateTrace {
    pub fn rows_per_iteration(&self) -> usize {
        self.method.rows_per_iteration()
    }

    /// Final squared error, when ground truth was available.
    pub fn final_error_sq(&self) -> Option<f64> {
        self.errors_sq.last().copied()
    }

    pub fn final_residual(&self) -> f64 {
        *self
            .residuals
            .last()
            .expect("trace always records the initial residual")
    }
}

/// Uniform row index in `0..m`.
pub fn sample_row(m: usize, rng: &mut impl Rng) -> usize {
    assert!(m >= 1, "cannot sample from an empty row set");
    rng.random_range(0..m)
}

/// Uniform ordered pair of distinct row indices.
pub fn sample_pair(m: usize, rng: &mut impl Rng) -> Result<(usize, usize), SolverError> {
    if m < 2 {
        return Err(SolverError::DegenerateMatrix(m));
    }
    let r = rng.random_range(0..m);
    let t = rng.random_range(0..m - 1);
    Ok((r, if t >= r { t + 1 } else { t }))
}

/// Ordered pair of distinct row indices with probability proportional to
/// `||a_r||^2 ||a_s||^2`: both indices are drawn independently with squared-
/// norm weights and the draw repeats until they differ, which conditions the
/// product distribution on distinctness.
pub fn sample_pair_weighted(
    row_norms: &[f64],
    rng: &mut impl Rng,
) -> Result<(usize, usize), SolverError> {
    if row_norms.len() < 2 {
        return Err(SolverError::DegenerateMatrix(row_norms.len()));
    }
    if row_norms.iter().any(|&n| !n.is_finite() || n <= 0.0) {
        return Err(SolverError::InvalidWeights(
            "row norms must be positive and finite".into(),
        ));
    }
    let weights: Vec<f64> = row_norms.iter().map(|n| n * n).collect();
    let dist =
        WeightedIndex::new(&weights).map_err(|e| SolverError::InvalidWeights(e.to_string()))?;
    for _ in 0..WEIGHTED_PAIR_ATTEMPTS {
        let r = rng.sample(&dist);
        let s = rng.sample(&dist);
        if r != s {
            return Ok((r, s));
        }
    }
    Err(SolverError::InvalidWeights(
        "rejection sampling failed to produce a distinct pair; weights are too concentrated".into(),
    ))
}

/// Single-row projection step: `x + (b - <a, x>) a` for a unit row `a`.
pub fn rk_step(x: &[f64], a: &[f64], b: f64) -> Result<Vec<f64>, LinalgError> {
    project_hyperplane(x, a, b)
}

fn require_unit(a: &[f64]) -> Result<(), SolverError> {
    let norm = norm2(a);
    if (norm - 1.0).abs() > UNIT_ROW_TOL {
        return Err(LinalgError::NotUnitRow { norm }.into());
    }
    Ok(())
}

/// One two-subspace step: project onto row `s`'s hyperplane, then along the
/// unit direction `v = (a_r - mu a_s) / sqrt(1 - mu^2)`, which together land
/// the iterate on the intersection of both hyperplanes.
///
/// Errors with [`SolverError::NearParallelRows`] when `|mu| >= 1 - 1e-12`;
/// the orthonormalization has no usable second direction there.
pub fn two_subspace_step(
    x: &[f64],
    a_r: &[f64],
    b_r: f64,
    a_s: &[f64],
    b_s: f64,
) -> Result<TwoSubspaceStepTrace, SolverError> {
    require_unit(a_r)?;
    require_unit(a_s)?;
    let mu = dot(a_r, a_s);
    if mu.abs() >= 1.0 - NEAR_PARALLEL_TOL {
        return Err(SolverError::NearParallelRows { mu });
    }
    let gamma = (1.0 - mu * mu).sqrt();
    let mut y = x.to_vec();
    axpy(&mut y, b_s - dot(x, a_s), a_s);
    let v: Vec<f64> = a_r
        .iter()
        .zip(a_s)
        .map(|(r, s)| (r - mu * s) / gamma)
        .collect();
    let beta = (b_r - mu * b_s) / gamma;
    let mut x_next = y.clone();
    axpy(&mut x_next, beta - dot(&y, &v), &v);
    Ok(TwoSubspaceStepTrace {
        mu,
        v,
        beta,
        y,
        x_next,
    })
}

/// The optimal oversized-step scalar for the pair `(r, s)`:
/// `eps = (res_r - mu res_s) / ((1 - mu^2) res_r)` with
/// `res_i = b_i - <a_i, x>`. The unknown solution enters the derivation only
/// through its row values, which are exactly `b_r` and `b_s`.
///
/// Errors when the pair is numerically parallel, or with
/// [`SolverError::ZeroDenominator`] when `|res_r| <= 1e-12` (the iterate
/// already sits on row `r`'s hyperplane, and any step scalar acts the same).
pub fn epsilon_opt(
    x: &[f64],
    a_r: &[f64],
    b_r: f64,
    a_s: &[f64],
    b_s: f64,
) -> Result<f64, SolverError> {
    require_unit(a_r)?;
    require_unit(a_s)?;
    let mu = dot(a_r, a_s);
    if mu.abs() >= 1.0 - NEAR_PARALLEL_TOL {
        return Err(SolverError::NearParallelRows { mu });
    }
    let res_r = b_r - dot(a_r, x);
    let res_s = b_s - dot(a_s, x);
    if res_r.abs() <= ZERO_RESIDUAL_TOL {
        return Err(SolverError::ZeroDenominator { residual: res_r });
    }
    Ok((res_r - mu * res_s) / ((1.0 - mu * mu) * res_r))
}

/// The two-step formulation: an `eps`-scaled step toward row `r`'s
/// hyperplane, then an exact projection onto row `s`'s. At the optimal
/// scalar this coincides with [`two_subspace_step`]; at `eps = 1` it is the
/// plain double projection.
pub fn two_step_with_eps(
    x: &[f64],
    a_r: &[f64],
    b_r: f64,
    a_s: &[f64],
    b_s: f64,
    eps: f64,
) -> Result<Vec<f64>, SolverError> {
    require_unit(a_r)?;
    require_unit(a_s)?;
    let mut y = x.to_vec();
    axpy(&mut y, eps * (b_r - dot(a_r, x)), a_r);
    let c = b_s - dot(&y, a_s);
    axpy(&mut y, c, a_s);
    Ok(y)
}

/// Exact orthogonal projection of `x` onto the intersection of the two row
/// hyperplanes, through the 2x2 Gram system
/// `[[1, mu], [mu, 1]] lambda = (res_r, res_s)`. This is the reference the
/// other pair formulations are checked against.
///
/// Errors with [`SolverError::SingularGram`] when `|1 - mu^2| <= 1e-14`.
pub fn pair_projection_oracle(
    x: &[f64],
    a_r: &[f64],
    b_r: f64,
    a_s: &[f64],
    b_s: f64,
) -> Result<Vec<f64>, SolverError> {
    require_unit(a_r)?;
    require_unit(a_s)?;
    let mu = dot(a_r, a_s);
    let det = 1.0 - mu * mu;
    if det.abs() <= SINGULAR_GRAM_TOL {
        return Err(SolverError::SingularGram { det });
    }
    let res_r = b_r - dot(a_r, x);
    let res_s = b_s - dot(a_s, x);
    let lambda_r = (res_r - mu * res_s) / det;
    let lambda_s = (res_s - mu * res_r) / det;
    let mut out = x.to_vec();
    axpy(&mut out, lambda_r, a_r);
    axpy(&mut out, lambda_s, a_s);
    Ok(out)
}

/// Working view of a system: unit rows, matching right-hand side, and the
/// original row norms for weighted sampling.
struct WorkingSystem {
    a: Matrix,
    b: Vec<f64>,
    norms: Vec<f64>,
}

impl WorkingSystem {
    fn build(system: &LinearSystem) -> Result<Self, SolverError> {
        let a = system.matrix();
        if a.is_standardized() {
            Ok(Self {
                a: a.clone(),
                b: system.rhs().to_vec(),
                norms: a.row_norms(),
            })
        } else {
            let (scaled, norms) = linalg::standardize(a)?;
            let b = system
                .rhs()
                .iter()
                .zip(&norms)
                .map(|(bi, ni)| bi / ni)
                .collect();
            Ok(Self {
                a: scaled,
                b,
                norms,
            })
        }
    }
}

/// Runs `config.method` on the system from the zero initial estimate.
pub fn solve(system: &LinearSystem, config: &SolverConfig) -> Result<IterateTrace, SolverError> {
    solve_from(system, config, &vec![0.0; system.matrix().ncols()])
}

/// Runs `config.method` on the system from an explicit initial estimate.
///
/// Rows are normalized internally (projections are invariant under row
/// scaling), while residuals are reported against the system as given and
/// weighted sampling uses the original row norms. With a positive
/// `stop_tolerance` the solve ends once the relative error (relative
/// residual when no ground truth is attached) falls to it.
pub fn solve_from(
    system: &LinearSystem,
    config: &SolverConfig,
    x0: &[f64],
) -> Result<IterateTrace, SolverError> {
    if config.max_iterations == 0 {
        return Err(SolverError::InvalidConfig(
            "max_iterations must be at least 1".into(),
        ));
    }
    if !config.stop_tolerance.is_finite() || config.stop_tolerance < 0.0 {
        return Err(SolverError::InvalidConfig(format!(
            "stop_tolerance must be finite and nonnegative, got {}",
            config.stop_tolerance
        )));
    }
    let n = system.matrix().ncols();
    if x0.len() != n {
        return Err(LinalgError::DimensionMismatch {
            context: format!(
                "initial estimate has length {}, system has {n} columns",
                x0.len()
            ),
        }
        .into());
    }
    let m = system.matrix().nrows();
    if config.method.rows_per_iteration() == 2 && m < 2 {
        return Err(SolverError::DegenerateMatrix(m));
    }

    let work = WorkingSystem::build(system)?;
    let weighted_dist = match config.method {
        Method::RkWeighted => {
            let weights: Vec<f64> = work.norms.iter().map(|n| n * n).collect();
            Some(
                WeightedIndex::new(&weights)
                    .map_err(|e| SolverError::InvalidWeights(e.to_string()))?,
            )
        }
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0.to_vec();
    let solution = system.solution();
    let mut errors_sq = Vec::new();
    let mut residuals = Vec::with_capacity(config.max_iterations + 1);
    let record = |x: &[f64], errors_sq: &mut Vec<f64>, residuals: &mut Vec<f64>| {
        if let Some(sol) = solution {
            errors_sq.push(norm2_sq(&sub(x, sol)));
        }
        residuals.push(system.residual_norm(x));
    };
    record(&x, &mut errors_sq, &mut residuals);

    let stop_now = |errors_sq: &[f64], residuals: &[f64]| -> bool {
        if config.stop_tolerance == 0.0 {
            return false;
        }
        let tol_sq = config.stop_tolerance * config.stop_tolerance;
        match solution {
            Some(_) => errors_sq.last().copied().unwrap() <= tol_sq * errors_sq[0],
            None => {
                let r = residuals.last().copied().unwrap();
                r * r <= tol_sq * residuals[0] * residuals[0]
            }
        }
    };

    let mut iterations_run = 0;
    let mut near_parallel_fallbacks = 0;
    let mut zero_residual_fallbacks = 0;
    let mut prev_row: Option<usize> = None;

    if !stop_now(&errors_sq, &residuals) {
        for k in 1..=config.max_iterations {
            match config.method {
                Method::Cyclic | Method::RkUniform | Method::RkWeighted => {
                    let i = match config.method {
                        Method::Cyclic => (k - 1) % m,
                        Method::RkUniform => match (config.replacement, prev_row) {
                            (Replacement::WithoutConsecutiveRepeat, Some(p)) if m > 1 => {
                                let t = rng.random_range(0..m - 1);
                                if t >= p {
                                    t + 1
                                } else {
                                    t
                                }
                            }
                            _ => sample_row(m, &mut rng),
                        },
                        Method::RkWeighted => {
                            let dist = weighted_dist.as_ref().unwrap();
                            let mut i = rng.sample(dist);
                            if config.replacement == Replacement::WithoutConsecutiveRepeat && m > 1
                            {
                                while Some(i) == prev_row {
                                    i = rng.sample(dist);
                                }
                            }
                            i
                        }
                        _ => unreachable!(),
                    };
                    x = rk_step(&x, work.a.row(i), work.b[i])?;
                    prev_row = Some(i);
                }
                Method::TwoSubspace | Method::TwoStepEpsOpt => {
                    let mut chosen = sample_pair(m, &mut rng)?;
                    let mut parallel = true;
                    for _ in 0..NEAR_PARALLEL_RESAMPLES {
                        let (r, s) = chosen;
                        if dot(work.a.row(r), work.a.row(s)).abs() < 1.0 - NEAR_PARALLEL_TOL {
                            parallel = false;
                            break;
                        }
                        chosen = sample_pair(m, &mut rng)?;
                    }
                    let (r, s) = chosen;
                    if parallel {
                        // Every candidate pair collapsed to one direction;
                        // the honest remainder of the step is the single
                        // projection onto the trailing row.
                        x = rk_step(&x, work.a.row(s), work.b[s])?;
                        near_parallel_fallbacks += 1;
                    } else {
                        let (a_r, b_r, a_s, b_s) =
                            (work.a.row(r), work.b[r], work.a.row(s), work.b[s]);
                        match config.method {
                            Method::TwoSubspace => {
                                x = two_subspace_step(&x, a_r, b_r, a_s, b_s)?.x_next;
                            }
                            Method::TwoStepEpsOpt => {
                                let eps = match epsilon_opt(&x, a_r, b_r, a_s, b_s) {
                                    Ok(e) => e,
                                    Err(SolverError::ZeroDenominator { .. }) => {
                                        // Already on row r's hyperplane: the
                                        // oversized step is a no-op for every
                                        // scalar, so take it as zero.
                                        zero_residual_fallbacks += 1;
                                        0.0
                                    }
                                    Err(e) => return Err(e),
                                };
                                x = two_step_with_eps(&x, a_r, b_r, a_s, b_s, eps)?;
                            }
                            _ => unreachable!(),
                        }
                    }
                    prev_row = Some(s);
                }
            }
            record(&x, &mut errors_sq, &mut residuals);
            iterations_run = k;
            if stop_now(&errors_sq, &residuals) {
                break;
            }
        }
    }

    Ok(IterateTrace {
        method: config.method,
        errors_sq,
        residuals,
        iterations_run,
        row_touches: iterations_run * config.method.rows_per_iteration(),
        near_parallel_fallbacks,
        zero_residual_fallbacks,
    })
}

/// Solves the system with its right-hand side perturbed by `w`, measuring
/// errors against the unperturbed solution. Returns the trace together with
/// the noise convergence threshold `sqrt(R) * ||w||_inf` for the system's
/// matrix: the expected error norm settles near this floor instead of
/// vanishing.
pub fn noisy_solve(
    system: &LinearSystem,
    w: &[f64],
    config: &SolverConfig,
) -> Result<(IterateTrace, f64), SolverError> {
    noisy_solve_from(system, w, config, &vec![0.0; system.matrix().ncols()])
}

/// [`noisy_solve`] from an explicit initial estimate.
pub fn noisy_solve_from(
    system: &LinearSystem,
    w: &[f64],
    config: &SolverConfig,
    x0: &[f64],
) -> Result<(IterateTrace, f64), SolverError> {
    if w.len() != system.matrix().nrows() {
        return Err(LinalgError::DimensionMismatch {
            context: format!(
                "noise has length {}, system has {} rows",
                w.len(),
                system.matrix().nrows()
            ),
        }
        .into());
    }
    if let Some(idx) = w.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { row: idx, col: 0 }.into());
    }
    let noisy_b: Vec<f64> = system.rhs().iter().zip(w).map(|(b, wi)| b + wi).collect();
    let noisy = LinearSystem::new_inconsistent(
        system.matrix().clone(),
        noisy_b,
        system.solution().map(|s| s.to_vec()),
    );
    let trace = solve_from(&noisy, config, x0)?;
    let sigma_min = linalg::smallest_singular_value(system.matrix())?;
    let r = system.matrix().frobenius_sq() / (sigma_min * sigma_min);
    let w_inf = w.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok((trace, r.sqrt() * w_inf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn unit_gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let norm = norm2(&v);
            if norm > 1e-6 {
                return v.iter().map(|x| x / norm).collect();
            }
        }
    }

    /// Distinct unit pair with correlation bounded away from 1.
    fn unit_pair(n: usize, max_mu: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let a_r = unit_gaussian(n, rng);
        loop {
            let a_s = unit_gaussian(n, rng);
            if dot(&a_r, &a_s).abs() <= max_mu {
                return (a_r, a_s);
            }
        }
    }

    #[test]
    fn sample_row_single_row_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_row(1, &mut rng), 0);
        }
    }

    #[test]
    fn sample_row_frequencies_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let m = 10;
        let draws = 1_000_000;
        let mut counts = vec![0u64; m];
        for _ in 0..draws {
            counts[sample_row(m, &mut rng)] += 1;
        }
        let expected = draws as f64 / m as f64;
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 4.0 * sigma,
                "row {i}: count {c} vs expected {expected}"
            );
        }
    }

    #[test]
    fn sample_pair_two_rows_hits_both_orders() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 1_000_000;
        let mut forward = 0u64;
        for _ in 0..draws {
            let (r, s) = sample_pair(2, &mut rng).unwrap();
            assert_ne!(r, s);
            if (r, s) == (0, 1) {
                forward += 1;
            }
        }
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((forward as f64 - draws as f64 / 2.0).abs() <= 4.0 * sigma);
    }

    #[test]
    fn sample_pair_frequencies_are_uniform_over_ordered_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = 5;
        let draws = 1_000_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let p = sample_pair(m, &mut rng).unwrap();
            *counts.entry(p).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), m * m - m);
        let p = 1.0 / (m * m - m) as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (&pair, &c) in &counts {
            assert!(
                (c as f64 - draws as f64 * p).abs() <= 4.0 * sigma,
                "pair {pair:?}: count {c}"
            );
        }
    }

    #[test]
    fn sample_pair_rejects_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_pair(1, &mut rng).unwrap_err(),
            SolverError::DegenerateMatrix(1)
        );
    }

    #[test]
    fn weighted_pair_frequencies_follow_norm_products() {
        // Norms (1, 1, 2) give squared weights (1, 1, 4); over ordered
        // distinct pairs the products normalize to 1/18 for (0,1), (1,0) and
        // 4/18 for every pair touching row 2.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws = 1_000_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let p = sample_pair_weighted(&[1.0, 1.0, 2.0], &mut rng).unwrap();
            *counts.entry(p).or_insert(0u64) += 1;
        }
        let want = |pair: (usize, usize)| -> f64 {
            let w = [1.0, 1.0, 4.0];
            w[pair.0] * w[pair.1] / 18.0
        };
        for (&pair, &c) in &counts {
            let p = want(pair);
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - draws as f64 * p).abs() <= 4.0 * sigma,
                "pair {pair:?}: count {c} vs p {p}"
            );
        }
    }

    #[test]
    fn weighted_pair_equal_norms_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let draws = 200_000;
        let mut forward = 0u64;
        for _ in 0..draws {
            let (r, s) = sample_pair_weighted(&[3.0, 3.0], &mut rng).unwrap();
            assert_ne!(r, s);
            if (r, s) == (0, 1) {
                forward += 1;
            }
        }
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((forward as f64 - draws as f64 / 2.0).abs() <= 4.0 * sigma);
    }

    #[test]
    fn weighted_pair_rejects_bad_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_pair_weighted(&[1.0, 0.0], &mut rng).unwrap_err(),
            SolverError::InvalidWeights(_)
        ));
        assert!(matches!(
            sample_pair_weighted(&[1.0], &mut rng).unwrap_err(),
            SolverError::DegenerateMatrix(1)
        ));
    }

    #[test]
    fn two_subspace_step_fixes_the_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a_r, a_s) = unit_pair(4, 0.9, &mut rng);
        let x_star = unit_gaussian(4, &mut rng);
        let (b_r, b_s) = (dot(&a_r, &x_star), dot(&a_s, &x_star));
        let t = two_subspace_step(&x_star, &a_r, b_r, &a_s, b_s).unwrap();
        assert!(norm2(&sub(&t.x_next, &x_star)) <= 1e-14);
    }

    #[test]
    fn two_subspace_step_with_orthogonal_rows_is_a_double_projection() {
        let a_r = vec![1.0, 0.0, 0.0];
        let a_s = vec![0.0, 1.0, 0.0];
        let x = vec![0.3, -0.7, 2.0];
        let t = two_subspace_step(&x, &a_r, 1.5, &a_s, -2.5).unwrap();
        let double = rk_step(&rk_step(&x, &a_s, -2.5).unwrap(), &a_r, 1.5).unwrap();
        assert!(norm2(&sub(&t.x_next, &double)) <= 1e-15);
        assert_eq!(t.mu, 0.0);
    }

    #[test]
    fn two_subspace_step_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let (a_r, a_s) = unit_pair(4, 0.999, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let (b_r, b_s): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let step = two_subspace_step(&x, &a_r, b_r, &a_s, b_s).unwrap().x_next;
            let oracle = pair_projection_oracle(&x, &a_r, b_r, &a_s, b_s).unwrap();
            let scale = norm2(&oracle).max(1.0);
            assert!(norm2(&sub(&step, &oracle)) <= 1e-10 * scale);
        }
    }

    #[test]
    fn two_subspace_step_rejects_parallel_rows() {
        let a = vec![0.6, 0.8];
        let err = two_subspace_step(&[0.0, 0.0], &a, 1.0, &a, 1.0).unwrap_err();
        assert!(matches!(err, SolverError::NearParallelRows { .. }));
    }

    #[test]
    fn epsilon_opt_is_one_for_orthogonal_rows() {
        let x = vec![0.1, 0.2, 0.3];
        let eps = epsilon_opt(&x, &[1.0, 0.0, 0.0], 2.0, &[0.0, 1.0, 0.0], 3.0).unwrap();
        assert_eq!(eps, 1.0);
    }

    #[test]
    fn epsilon_opt_rejects_satisfied_leading_row() {
        let x = vec![2.0, 0.5, 0.0];
        let err = epsilon_opt(&x, &[1.0, 0.0, 0.0], 2.0, &[0.0, 1.0, 0.0], 3.0).unwrap_err();
        assert!(matches!(err, SolverError::ZeroDenominator { .. }));
    }

    #[test]
    fn two_step_with_zero_eps_is_a_single_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (a_r, a_s) = unit_pair(5, 0.9, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let got = two_step_with_eps(&x, &a_r, 1.0, &a_s, -0.5, 0.0).unwrap();
        let want = rk_step(&x, &a_s, -0.5).unwrap();
        assert!(norm2(&sub(&got, &want)) <= 1e-15);
    }

    #[test]
    fn two_step_with_unit_eps_is_the_naive_double_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (a_r, a_s) = unit_pair(5, 0.9, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let got = two_step_with_eps(&x, &a_r, 1.0, &a_s, -0.5, 1.0).unwrap();
        let want = rk_step(&rk_step(&x, &a_r, 1.0).unwrap(), &a_s, -0.5).unwrap();
        assert!(norm2(&sub(&got, &want)) <= 1e-15);
    }

    #[test]
    fn optimal_two_step_matches_two_subspace_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..200 {
            let (a_r, a_s) = unit_pair(6, 0.99, &mut rng);
            let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let (b_r, b_s): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let eps = match epsilon_opt(&x, &a_r, b_r, &a_s, b_s) {
                Ok(e) => e,
                Err(SolverError::ZeroDenominator { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let via_eps = two_step_with_eps(&x, &a_r, b_r, &a_s, b_s, eps).unwrap();
            let direct = two_subspace_step(&x, &a_r, b_r, &a_s, b_s).unwrap().x_next;
            let scale = norm2(&direct).max(1.0);
            assert!(norm2(&sub(&via_eps, &direct)) <= 1e-11 * scale);
        }
    }

    #[test]
    fn pair_projection_oracle_fixes_points_on_both_hyperplanes() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let (a_r, a_s) = unit_pair(4, 0.9, &mut rng);
        let x_star = unit_gaussian(4, &mut rng);
        let out =
            pair_projection_oracle(&x_star, &a_r, dot(&a_r, &x_star), &a_s, dot(&a_s, &x_star))
                .unwrap();
        assert!(norm2(&sub(&out, &x_star)) <= 1e-14);
    }

    #[test]
    fn pair_projection_oracle_matches_kkt_solve() {
        // Independent route: solve the full KKT system
        // [[I, K^T], [K, 0]] [x'; lambda] = [x; b] by LU.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let n = 5;
            let (a_r, a_s) = unit_pair(n, 0.99, &mut rng);
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let (b_r, b_s): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let dim = n + 2;
            let mut kkt = nalgebra::DMatrix::<f64>::zeros(dim, dim);
            let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
            for i in 0..n {
                kkt[(i, i)] = 1.0;
                kkt[(i, n)] = a_r[i];
                kkt[(i, n + 1)] = a_s[i];
                kkt[(n, i)] = a_r[i];
                kkt[(n + 1, i)] = a_s[i];
                rhs[i] = x[i];
            }
            rhs[n] = b_r;
            rhs[n + 1] = b_s;
            let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
            let want: Vec<f64> = (0..n).map(|i| sol[i]).collect();
            let got = pair_projection_oracle(&x, &a_r, b_r, &a_s, b_s).unwrap();
            let scale = norm2(&want).max(1.0);
            assert!(norm2(&sub(&got, &want)) <= 1e-10 * scale);
        }
    }

    #[test]
    fn pair_projection_oracle_rejects_singular_gram() {
        let a = vec![1.0, 0.0];
        let err = pair_projection_oracle(&[0.0, 0.0], &a, 1.0, &a, 2.0).unwrap_err();
        assert!(matches!(err, SolverError::SingularGram { .. }));
    }

    fn identity_system(n: usize) -> LinearSystem {
        let b: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let sol = b.clone();
        LinearSystem::new(Matrix::identity(n), b, Some(sol)).unwrap()
    }

    #[test]
    fn rk_on_identity_converges_to_machine_zero() {
        let system = identity_system(3);
        let config = SolverConfig {
            max_iterations: 200,
            ..SolverConfig::new(Method::RkUniform, 9)
        };
        let trace = solve(&system, &config).unwrap();
        // Each projection pins one coordinate exactly; after every row has
        // been drawn at least once the error is exactly zero.
        assert!(trace.final_error_sq().unwrap() <= 1e-30);
        assert_eq!(trace.errors_sq.len(), 201);
        assert_eq!(trace.row_touches, 200);
    }

    #[test]
    fn two_subspace_on_two_by_two_solves_in_one_iteration() {
        let a = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![
                std::f64::consts::FRAC_1_SQRT_2,
                std::f64::consts::FRAC_1_SQRT_2,
            ],
        ])
        .unwrap();
        let x_star = vec![2.0, -1.0];
        let b = a.mul_vec(&x_star);
        let system = LinearSystem::new(a, b, Some(x_star)).unwrap();
        let config = SolverConfig {
            max_iterations: 1,
            ..SolverConfig::new(Method::TwoSubspace, 55)
        };
        let trace = solve(&system, &config).unwrap();
        assert!(trace.errors_sq[1] <= 1e-28);
        assert_eq!(trace.row_touches, 2);
    }

    #[test]
    fn cyclic_sweeps_rows_in_order() {
        // On the identity, the k-th cyclic iteration fixes coordinate
        // (k-1) mod n exactly.
        let system = identity_system(3);
        let config = SolverConfig {
            max_iterations: 2,
            ..SolverConfig::new(Method::Cyclic, 0)
        };
        let trace = solve(&system, &config).unwrap();
        // After two iterations coordinates 0 and 1 are exact: remaining error
        // is coordinate 2 alone, (0 - 3)^2 = 9.
        assert_abs_diff_eq!(trace.errors_sq[2], 9.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let a = Matrix::from_fn(8, 3, |_, _| rng.random_range(0.2..1.0)).unwrap();
        let x_star: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let b = a.mul_vec(&x_star);
        let system = LinearSystem::new(a, b, Some(x_star)).unwrap();
        for method in [
            Method::RkUniform,
            Method::RkWeighted,
            Method::TwoSubspace,
            Method::TwoStepEpsOpt,
        ] {
            let config = SolverConfig {
                max_iterations: 50,
                ..SolverConfig::new(method, 4242)
            };
            let t1 = solve(&system, &config).unwrap();
            let t2 = solve(&system, &config).unwrap();
            assert_eq!(t1, t2, "method {method}");
        }
    }

    #[test]
    fn without_replacement_never_repeats_consecutively() {
        // On a 2x2 identity, forbidding consecutive repeats forces the row
        // sequence to alternate, so both coordinates are exact after two
        // iterations for every seed. With replacement, some seed repeats the
        // first row and still carries error at k = 2.
        let system = identity_system(2);
        for method in [Method::RkUniform, Method::RkWeighted] {
            let mut repeat_seen = false;
            for seed in 0..50 {
                let without = SolverConfig {
                    max_iterations: 2,
                    replacement: Replacement::WithoutConsecutiveRepeat,
                    ..SolverConfig::new(method, seed)
                };
                let trace = solve(&system, &without).unwrap();
                assert!(
                    trace.errors_sq[2] <= 1e-30,
                    "{method} seed {seed} repeated a row despite the without-repeat rule"
                );
                let with = SolverConfig {
                    replacement: Replacement::With,
                    ..without
                };
                if solve(&system, &with).unwrap().errors_sq[2] > 1e-30 {
                    repeat_seen = true;
                }
            }
            assert!(
                repeat_seen,
                "{method}: with-replacement never repeated in 50 seeds"
            );
        }
    }

    #[test]
    fn stop_tolerance_halts_early() {
        let system = identity_system(4);
        let config = SolverConfig {
            max_iterations: 10_000,
            stop_tolerance: 1e-6,
            ..SolverConfig::new(Method::RkUniform, 11)
        };
        let trace = solve(&system, &config).unwrap();
        assert!(trace.iterations_run < 10_000);
        let last = trace.final_error_sq().unwrap();
        assert!(last <= 1e-12 * trace.errors_sq[0]);
    }

    #[test]
    fn zero_tolerance_runs_the_full_budget() {
        let system = identity_system(2);
        let config = SolverConfig {
            max_iterations: 500,
            ..SolverConfig::new(Method::RkUniform, 3)
        };
        let trace = solve(&system, &config).unwrap();
        assert_eq!(trace.iterations_run, 500);
    }

    #[test]
    fn solve_standardizes_internally() {
        // Same system with rescaled rows must converge to the same solution.
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 4.0], vec![0.0, 5.0]]).unwrap();
        let x_star = vec![1.0, 2.0];
        let b = a.mul_vec(&x_star);
        let system = LinearSystem::new(a, b, Some(x_star.clone())).unwrap();
        let config = SolverConfig {
            max_iterations: 400,
            ..SolverConfig::new(Method::TwoSubspace, 19)
        };
        let trace = solve(&system, &config).unwrap();
        assert!(trace.final_error_sq().unwrap() <= 1e-20 * norm2_sq(&x_star));
    }

    #[test]
    fn noisy_solve_with_zero_noise_matches_plain_solve() {
        let system = identity_system(3);
        let config = SolverConfig {
            max_iterations: 100,
            ..SolverConfig::new(Method::RkUniform, 23)
        };
        let plain = solve(&system, &config).unwrap();
        let (noisy, threshold) = noisy_solve(&system, &[0.0; 3], &config).unwrap();
        assert_eq!(plain, noisy);
        assert_eq!(threshold, 0.0);
    }

    #[test]
    fn noisy_threshold_scales_linearly_with_noise() {
        let system = identity_system(3);
        let config = SolverConfig {
            max_iterations: 10,
            ..SolverConfig::new(Method::RkUniform, 29)
        };
        let (_, t1) = noisy_solve(&system, &[0.001, 0.0, -0.001], &config).unwrap();
        let (_, t2) = noisy_solve(&system, &[0.002, 0.0, -0.002], &config).unwrap();
        assert_abs_diff_eq!(2.0 * t1, t2, epsilon = 1e-15);
        // Identity: R = n, threshold = sqrt(3) * 0.001.
        assert_abs_diff_eq!(t1, 3.0f64.sqrt() * 0.001, epsilon = 1e-12);
    }

    #[test]
    fn scalar_inequality_for_pair_couplings_holds() {
        // (theta u - pi v)^2 + (theta v - pi u)^2 >= (|pi| - |theta|)^2 (u^2 + v^2).
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..100_000 {
            let (theta, pi, u, v): (f64, f64, f64, f64) = (
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let lhs = (theta * u - pi * v).powi(2) + (theta * v - pi * u).powi(2);
            let rhs = (pi.abs() - theta.abs()).powi(2) * (u * u + v * v);
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            assert!(
                lhs >= rhs - 1e-12 * scale,
                "theta={theta} pi={pi} u={u} v={v}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn errors_never_increase(
            seed in 0u64..1000,
            method_idx in 0usize..5,
        ) {
            let method = [
                Method::Cyclic,
                Method::RkUniform,
                Method::RkWeighted,
                Method::TwoSubspace,
                Method::TwoStepEpsOpt,
            ][method_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 6;
            let n = 3;
            // Keep pairs bounded away from parallel so the orthonormalization
            // stays numerically benign.
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
            while rows.len() < m {
                let cand = unit_gaussian(n, &mut rng);
                if rows.iter().all(|r| dot(r, &cand).abs() <= 0.99) {
                    rows.push(cand);
                }
            }
            let a = Matrix::from_rows(&rows).unwrap();
            let x_star: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let b = a.mul_vec(&x_star);
            let system = match LinearSystem::new(a, b, Some(x_star)) {
                Ok(s) => s,
                Err(_) => return Ok(()), // rank-deficient draw
            };
            let config = SolverConfig { max_iterations: 60, ..SolverConfig::new(method, seed ^ 0xabcd) };
            let trace = solve(&system, &config).unwrap();
            // Each step perturbs the iterate by a few ulps of its own scale,
            // which moves the distance additively; compare distances with a
            // relative slack plus that absolute allowance.
            let dist: Vec<f64> = trace.errors_sq.iter().map(|e| e.sqrt()).collect();
            let slack = 1e-13 * dist[0].max(1.0);
            for k in 1..dist.len() {
                prop_assert!(
                    dist[k] <= dist[k - 1] * (1.0 + 1e-12) + slack,
                    "error grew at k = {} under {}", k, method
                );
            }
        }
    }
}
