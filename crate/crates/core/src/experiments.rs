//! Figure-scale experiment harnesses and statistical verification suites.
//!
//! `run_envelope` reproduces the benchmark protocol: per trial, draw a system
//! and an initial estimate, run every configured method from that shared
//! starting point, and aggregate mean/min/max squared-error curves on a
//! row-touch-equalized axis with theoretical bound overlays. The `verify_*`
//! harnesses check the per-pair step identity, the exact-expectation lemma
//! inequalities, the contraction theorem, and the noisy convergence threshold
//! at desk scale. `dfactor_grid` tabulates the improvement-factor surface and
//! `preset` names the figure configurations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analysis::{self, AnalysisError, CoherenceProfile, ConditioningProfile};
use crate::generators::{self, GeneratorError, GeneratorSpec};
use crate::linalg::{dot, norm2_sq, sub, Matrix};
use crate::solvers::{self, two_subspace_step, Method, Replacement, SolverConfig, SolverError};

/// Identity-harness pairs with |mu| above this are reported as skipped:
/// the deterministic identity still holds, but forming v = (a_r - mu a_s)/gamma
/// cancels too many digits for a 1e-10 check to be meaningful.
pub const IDENTITY_MU_CAP: f64 = 0.99;
/// Attempts at redrawing a degenerate instance (dependent rows, rank loss)
/// before a harness gives up.
const INSTANCE_ATTEMPTS: u64 = 64;
/// Normalized slack below which a lemma margin counts as a violation.
pub const LEMMA_SLACK: f64 = -1e-10;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("trial {trial}: {source}")]
    Generator {
        trial: usize,
        #[source]
        source: GeneratorError,
    },
    #[error("trial {trial}: {source}")]
    Solver {
        trial: usize,
        #[source]
        source: SolverError,
    },
    #[error("trial {trial}: {source}")]
    Analysis {
        trial: usize,
        #[source]
        source: AnalysisError,
    },
    #[error(transparent)]
    Aggregate(#[from] AnalysisError),
}

fn default_trials() -> usize {
    40
}

fn default_pairing() -> bool {
    true
}

/// A benchmark configuration: which systems to draw, how many trials, the
/// per-method iteration budget, and whether single-row methods get twice the
/// iterations so both kinds of method touch the same number of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub generator: GeneratorSpec,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub iterations: usize,
    pub methods: Vec<SolverConfig>,
    #[serde(default = "default_pairing")]
    pub pairing: bool,
}

impl ExperimentSpec {
    /// Spec with the benchmark protocol defaults: 40 trials, row-touch pairing.
    pub fn new(generator: GeneratorSpec, iterations: usize, methods: Vec<SolverConfig>) -> Self {
        Self {
            generator,
            trials: default_trials(),
            iterations,
            methods,
            pairing: true,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.generator
            .validate()
            .map_err(|e| ExperimentError::InvalidSpec(format!("generator: {e}")))?;
        if self.trials == 0 {
            return Err(ExperimentError::InvalidSpec(
                "trials must be at least 1".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(ExperimentError::InvalidSpec(
                "iterations must be at least 1".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(ExperimentError::InvalidSpec(
                "methods must not be empty".into(),
            ));
        }
        Ok(())
    }
}

/// One method's aggregated error curves on the shared row-touch axis,
/// with the theoretical RK and two-subspace bound curves scaled to the mean
/// initial error for direct overlay.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodEnvelope {
    pub method: Method,
    pub row_touches: Vec<u64>,
    pub mean_err_sq: Vec<f64>,
    pub min_err_sq: Vec<f64>,
    pub max_err_sq: Vec<f64>,
    pub bound_rk: Vec<f64>,
    pub bound_two_subspace: Vec<f64>,
}

/// Aggregate of a full experiment: per-method envelopes plus the mean
/// coherence and conditioning profiles of the trial matrices (the improvement
/// factor and scaled condition are recomputed from the averaged parameters,
/// which concentrate hard at benchmark scale).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialEnvelope {
    pub methods: Vec<MethodEnvelope>,
    pub coherence: CoherenceProfile,
    pub conditioning: ConditioningProfile,
    pub trials: usize,
    pub iterations: usize,
    pub mean_initial_err_sq: f64,
}

/// Splitmix64 finalizer over a golden-gamma salt: deterministic per-trial
/// sub-seeds without any shared RNG state across threads.
fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TrialOutput {
    delta: f64,
    delta_max: f64,
    frobenius_sq: f64,
    sigma_min: f64,
    scaled_condition: f64,
    initial_err_sq: f64,
    /// Per method, squared errors on that method's envelope axis.
    series: Vec<Vec<f64>>,
}

/// Runs every configured method over `spec.trials` independent trials.
///
/// Each trial draws its own system and initial estimate (both derived from
/// the generator seed), shares them across methods, and runs each method with
/// a trial-specific sampling seed. With pairing on, single-row methods run
/// `2 * iterations` iterations and their traces are subsampled to even row
/// touches, so every envelope lives on the axis 0, 2, ..., 2*iterations.
/// Method seeds and stop tolerances in `spec.methods` are ignored: seeds are
/// derived per trial and traces always run the full budget.
pub fn run_envelope(spec: &ExperimentSpec) -> Result<TrialEnvelope, ExperimentError> {
    spec.validate()?;
    let master = spec.generator.seed;
    let roles = 4 + spec.methods.len() as u64;

    let outputs: Vec<TrialOutput> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| run_trial(spec, master, roles, trial))
        .collect::<Result<Vec<_>, _>>()?;

    aggregate(spec, &outputs)
}

fn run_trial(
    spec: &ExperimentSpec,
    master: u64,
    roles: u64,
    trial: usize,
) -> Result<TrialOutput, ExperimentError> {
    let t = trial as u64;
    let gen_spec = GeneratorSpec {
        seed: derive_seed(master, t * roles),
        ..spec.generator
    };
    let system = generators::generate_system(&gen_spec)
        .map_err(|source| ExperimentError::Generator { trial, source })?;
    let x0 = generators::initial_estimate(gen_spec.n, derive_seed(master, t * roles + 1));
    let solution = system
        .solution()
        .expect("generated systems carry ground truth");
    let initial_err_sq = norm2_sq(&sub(&x0, solution));

    let coh = analysis::coherence(system.matrix())
        .map_err(|source| ExperimentError::Analysis { trial, source })?;
    let cond = analysis::scaled_condition_number(system.matrix())
        .map_err(|source| ExperimentError::Analysis { trial, source })?;

    let mut series = Vec::with_capacity(spec.methods.len());
    for (j, method_cfg) in spec.methods.iter().enumerate() {
        let doubled = spec.pairing && method_cfg.method.rows_per_iteration() == 1;
        let iterations = if doubled {
            2 * spec.iterations
        } else {
            spec.iterations
        };
        let config = SolverConfig {
            method: method_cfg.method,
            max_iterations: iterations,
            stop_tolerance: 0.0,
            seed: derive_seed(master, t * roles + 4 + j as u64),
            replacement: method_cfg.replacement,
        };
        let trace = solvers::solve_from(&system, &config, &x0)
            .map_err(|source| ExperimentError::Solver { trial, source })?;
        let errors = if doubled {
            (0..=spec.iterations)
                .map(|i| trace.errors_sq[2 * i])
                .collect()
        } else {
            trace.errors_sq.clone()
        };
        series.push(errors);
    }

    Ok(TrialOutput {
        delta: coh.coherence_min,
        delta_max: coh.coherence_max,
        frobenius_sq: cond.frobenius_sq,
        sigma_min: cond.sigma_min,
        scaled_condition: cond.scaled_condition,
        initial_err_sq,
        series,
    })
}

fn aggregate(
    spec: &ExperimentSpec,
    outputs: &[TrialOutput],
) -> Result<TrialEnvelope, ExperimentError> {
    let trials = outputs.len();
    let inv = 1.0 / trials as f64;
    let mean_of = |f: &dyn Fn(&TrialOutput) -> f64| outputs.iter().map(f).sum::<f64>() * inv;

    let delta = mean_of(&|o| o.delta);
    let delta_max = mean_of(&|o| o.delta_max);
    let improvement = analysis::improvement_factor(delta, delta_max)?;
    let coherence = CoherenceProfile {
        coherence_min: delta,
        coherence_max: delta_max,
        improvement,
    };
    let conditioning = ConditioningProfile {
        frobenius_sq: mean_of(&|o| o.frobenius_sq),
        sigma_min: mean_of(&|o| o.sigma_min),
        scaled_condition: mean_of(&|o| o.scaled_condition),
    };
    let mean_initial_err_sq = mean_of(&|o| o.initial_err_sq);

    let r = conditioning.scaled_condition;
    let base = analysis::two_subspace_base(r, improvement);

    let mut methods = Vec::with_capacity(spec.methods.len());
    for (j, method_cfg) in spec.methods.iter().enumerate() {
        let points = spec.iterations + 1;
        let mut mean = vec![0.0; points];
        let mut min = vec![f64::INFINITY; points];
        let mut max = vec![f64::NEG_INFINITY; points];
        for output in outputs {
            for (i, &e) in output.series[j].iter().enumerate() {
                mean[i] += e * inv;
                min[i] = min[i].min(e);
                max[i] = max[i].max(e);
            }
        }
        let touches_per_index = if spec.pairing {
            2
        } else {
            method_cfg.method.rows_per_iteration() as u64
        };
        let row_touches: Vec<u64> = (0..points as u64).map(|i| i * touches_per_index).collect();
        let bound_rk: Vec<f64> = row_touches
            .iter()
            .map(|&t| analysis::bound_rk(r, t) * mean_initial_err_sq)
            .collect();
        let bound_two_subspace: Vec<f64> = row_touches
            .iter()
            .map(|&t| {
                let b = if t % 2 == 0 {
                    analysis::bound_two_subspace(r, improvement, t / 2)
                } else {
                    base.powf(t as f64 / 2.0)
                };
                b * mean_initial_err_sq
            })
            .collect();
        methods.push(MethodEnvelope {
            method: method_cfg.method,
            row_touches,
            mean_err_sq: mean,
            min_err_sq: min,
            max_err_sq: max,
            bound_rk,
            bound_two_subspace,
        });
    }

    Ok(TrialEnvelope {
        methods,
        coherence,
        conditioning,
        trials,
        iterations: spec.iterations,
        mean_initial_err_sq,
    })
}

/// Result of the per-pair step-identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub instances: usize,
    pub pairs_checked: usize,
    /// Pairs with |mu| beyond [`IDENTITY_MU_CAP`], excluded from the check.
    pub pairs_skipped: usize,
    /// Largest |lhs - rhs| / ||e||^2 seen over all checked pairs.
    pub max_violation: f64,
}

/// Verifies, per ordered pair, that one two-subspace step equals two RK steps
/// minus the explicit correction term:
///
/// ||x - x_k||^2 = ||x - z'||^2 - (mu^2 <e, v> - gamma mu <e, a_s>)^2
///
/// on random standardized gaussian systems with m in [4,20], n in [2,6] and a
/// random current error. Reports the worst normalized violation.
pub fn verify_step_identity(instances: usize, seed: u64) -> IdentityReport {
    let mut pairs_checked = 0usize;
    let mut pairs_skipped = 0usize;
    let mut max_violation = 0.0f64;

    for i in 0..instances {
        let (a, x_star, x_prev, e) = identity_instance(seed, i as u64);
        let m = a.nrows();
        let b: Vec<f64> = (0..m).map(|r| dot(a.row(r), &x_star)).collect();
        let e_sq = norm2_sq(&e);
        for r in 0..m {
            for s in 0..m {
                if r == s {
                    continue;
                }
                let (a_r, a_s) = (a.row(r), a.row(s));
                let mu = dot(a_r, a_s);
                if mu.abs() > IDENTITY_MU_CAP {
                    pairs_skipped += 1;
                    continue;
                }
                let step = two_subspace_step(&x_prev, a_r, b[r], a_s, b[s])
                    .expect("pair passed the parallel screen");
                let lhs = norm2_sq(&sub(&x_star, &step.x_next));

                let z = solvers::rk_step(&x_prev, a_r, b[r]).expect("standardized row");
                let z_prime = solvers::rk_step(&z, a_s, b[s]).expect("standardized row");
                let gamma = (1.0 - mu * mu).sqrt();
                let v: Vec<f64> = a_r
                    .iter()
                    .zip(a_s)
                    .map(|(&ar, &as_)| (ar - mu * as_) / gamma)
                    .collect();
                let correction = mu * mu * dot(&e, &v) - gamma * mu * dot(&e, a_s);
                let rhs = norm2_sq(&sub(&x_star, &z_prime)) - correction * correction;

                max_violation = max_violation.max((lhs - rhs).abs() / e_sq);
                pairs_checked += 1;
            }
        }
    }

    IdentityReport {
        instances,
        pairs_checked,
        pairs_skipped,
        max_violation,
    }
}

/// Random standardized gaussian system plus a random current estimate:
/// returns (A, x_star, x_prev, e) with x_prev = x_star - e.
fn identity_instance(seed: u64, index: u64) -> (Matrix, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
    let m = rng.random_range(4..=20usize);
    let n = rng.random_range(2..=6usize.min(m - 1));
    let a = loop {
        let raw = Matrix::from_fn(m, n, |_, _| rng.sample(StandardNormal))
            .expect("gaussian entries are finite");
        match crate::linalg::standardize(&raw) {
            Ok((std, _)) => break std,
            Err(_) => continue,
        }
    };
    let x_star: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let x_prev = sub(&x_star, &e);
    (a, x_star, x_prev, e)
}

/// Result of the exact-expectation lemma suite.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub instances: usize,
    /// Smallest normalized margin (bound minus exact expectation, over
    /// ||e||^2) of the pairwise-correction inequality.
    pub min_margin_pairwise: f64,
    /// Smallest normalized margin of the coherence-factor inequality.
    pub min_margin_coherence: f64,
    /// Margins below [`LEMMA_SLACK`] in either inequality.
    pub violations: usize,
    /// Instances where the pairwise margin exceeded the coherence margin
    /// (the pairwise bound is the tighter statement, so this must stay 0).
    pub ordering_violations: usize,
}

/// Enumerates all m^2 - m ordered pairs to compute the exact conditional
/// expectation of the two-subspace squared error after one step, then checks
/// it against the pairwise-correction bound
///
/// E <= (1 - 1/R)^2 ||e||^2 - (1/(m^2-m)) sum_{r<s} C_{r,s}^2 (<e,a_r>^2 + <e,a_s>^2),
/// C_{r,s} = (|mu| - mu^2) / sqrt(1 - mu^2),
///
/// and the weaker coherence form E <= ((1 - 1/R)^2 - D/R) ||e||^2. Instances
/// cycle the generator's interval over c in {-0.5, 0.2, 0.5, 0.9} with
/// m in [4,20], n in [2,6].
pub fn verify_lemma_expectation(instances: usize, seed: u64) -> LemmaReport {
    let cs = [-0.5, 0.2, 0.5, 0.9];
    let mut min_margin_pairwise = f64::INFINITY;
    let mut min_margin_coherence = f64::INFINITY;
    let mut violations = 0usize;
    let mut ordering_violations = 0usize;

    for i in 0..instances {
        let c = cs[i % cs.len()];
        let (system, coh, cond, e, x_prev) = lemma_instance(seed, i as u64, c);
        let a = system.matrix();
        let b = system.rhs();
        let x_star = system
            .solution()
            .expect("generated systems carry ground truth");
        let m = a.nrows();
        let e_sq = norm2_sq(&e);
        let pairs = (m * m - m) as f64;

        let mut exact_expectation = 0.0;
        for r in 0..m {
            for s in 0..m {
                if r == s {
                    continue;
                }
                let step = two_subspace_step(&x_prev, a.row(r), b[r], a.row(s), b[s])
                    .expect("instance screened for dependent rows");
                exact_expectation += norm2_sq(&sub(x_star, &step.x_next)) / pairs;
            }
        }

        let r_cond = cond.scaled_condition;
        let rk_two = analysis::bound_rk(r_cond, 2);
        let mut correction = 0.0;
        for r in 0..m {
            for s in (r + 1)..m {
                let mu = dot(a.row(r), a.row(s));
                let c_rs = (mu.abs() - mu * mu) / (1.0 - mu * mu).sqrt();
                let proj_r = dot(&e, a.row(r));
                let proj_s = dot(&e, a.row(s));
                correction += c_rs * c_rs * (proj_r * proj_r + proj_s * proj_s) / pairs;
            }
        }
        let bound_pairwise = rk_two * e_sq - correction;
        let bound_coherence = analysis::two_subspace_base(r_cond, coh.improvement) * e_sq;

        let margin_pairwise = (bound_pairwise - exact_expectation) / e_sq;
        let margin_coherence = (bound_coherence - exact_expectation) / e_sq;
        min_margin_pairwise = min_margin_pairwise.min(margin_pairwise);
        min_margin_coherence = min_margin_coherence.min(margin_coherence);
        if margin_pairwise < LEMMA_SLACK || margin_coherence < LEMMA_SLACK {
            violations += 1;
        }
        if margin_pairwise > margin_coherence + 1e-12 {
            ordering_violations += 1;
        }
    }

    LemmaReport {
        instances,
        min_margin_pairwise,
        min_margin_coherence,
        violations,
        ordering_violations,
    }
}

fn lemma_instance(
    seed: u64,
    index: u64,
    c: f64,
) -> (
    crate::linalg::LinearSystem,
    CoherenceProfile,
    ConditioningProfile,
    Vec<f64>,
    Vec<f64>,
) {
    for attempt in 0..INSTANCE_ATTEMPTS {
        let salt = index * INSTANCE_ATTEMPTS + attempt;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, salt));
        let m = rng.random_range(4..=20usize);
        let n = rng.random_range(2..=6usize.min(m - 1));
        let spec = GeneratorSpec::new(m, n, c, derive_seed(seed, salt ^ 0x5bd1_e995));
        let system = match generators::generate_system(&spec) {
            Ok(s) => s,
            Err(_) => continue,
        };
        // Dependent-row screen: enumeration visits every pair, so all of them
        // must clear the step's parallel gate.
        let coh = match analysis::coherence(system.matrix()) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let cond = match analysis::scaled_condition_number(system.matrix()) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x_star = system
            .solution()
            .expect("generated systems carry ground truth");
        let x_prev = sub(x_star, &e);
        return (system, coh, cond, e, x_prev);
    }
    panic!("no usable lemma instance after {INSTANCE_ATTEMPTS} attempts");
}

/// Result of the theorem Monte Carlo: sample means versus the contraction
/// bound, with the indices where the mean exceeded bound + 3 standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub trials: usize,
    pub iterations: usize,
    pub scaled_condition: f64,
    pub improvement: f64,
    /// Per-iteration contraction base ((1 - 1/R)^2 - D/R).
    pub rate: f64,
    pub initial_err_sq: f64,
    /// Iteration indices where the sample mean broke the bound.
    pub flagged: Vec<usize>,
    pub mean_err_sq: Vec<f64>,
    pub bound: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Monte Carlo check of the contraction theorem on one fixed system and one
/// fixed initial estimate: the two-subspace sample-mean squared error at every
/// k must stay at or below rate^k ||e_0||^2 + 3 standard errors. Requires at
/// least 200 trials for the standard errors to mean anything.
pub fn verify_theorem_bound(spec: &ExperimentSpec) -> Result<TheoremReport, ExperimentError> {
    spec.validate()?;
    if spec.trials < 200 {
        return Err(ExperimentError::InvalidSpec(format!(
            "theorem verification needs at least 200 trials for statistical power, got {}",
            spec.trials
        )));
    }
    let master = spec.generator.seed;
    let system = generators::generate_system(&spec.generator)
        .map_err(|source| ExperimentError::Generator { trial: 0, source })?;
    let x0 = generators::initial_estimate(spec.generator.n, derive_seed(master, 1));
    let solution = system
        .solution()
        .expect("generated systems carry ground truth");
    let initial_err_sq = norm2_sq(&sub(&x0, solution));

    let coh = analysis::coherence(system.matrix())
        .map_err(|source| ExperimentError::Analysis { trial: 0, source })?;
    let cond = analysis::scaled_condition_number(system.matrix())
        .map_err(|source| ExperimentError::Analysis { trial: 0, source })?;
    let rate = analysis::two_subspace_base(cond.scaled_condition, coh.improvement);

    let curves: Vec<Vec<f64>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let config = SolverConfig {
                method: Method::TwoSubspace,
                max_iterations: spec.iterations,
                stop_tolerance: 0.0,
                seed: derive_seed(master, 1000 + trial as u64),
                replacement: Replacement::With,
            };
            solvers::solve_from(&system, &config, &x0)
                .map(|t| t.errors_sq)
                .map_err(|source| ExperimentError::Solver { trial, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let points = spec.iterations + 1;
    let (mean, stderr) = mean_and_stderr(&curves, points);
    let bound: Vec<f64> = (0..points as u64)
        .map(|k| {
            analysis::bound_two_subspace(cond.scaled_condition, coh.improvement, k) * initial_err_sq
        })
        .collect();
    // The relative guard absorbs float-summation roundoff in the mean; at
    // k = 0 every trial holds the same value, so stderr alone is no cushion.
    let flagged: Vec<usize> = (0..points)
        .filter(|&k| mean[k] > bound[k] * (1.0 + 1e-12) + 3.0 * stderr[k])
        .collect();

    Ok(TheoremReport {
        trials: spec.trials,
        iterations: spec.iterations,
        scaled_condition: cond.scaled_condition,
        improvement: coh.improvement,
        rate,
        initial_err_sq,
        flagged,
        mean_err_sq: mean,
        bound,
        stderr,
    })
}

/// Result of the noisy-threshold experiment: RK error-norm means against the
/// decay-plus-threshold curve.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyReport {
    pub trials: usize,
    pub iterations: usize,
    pub scaled_condition: f64,
    /// sqrt(R) * level, the theoretical convergence floor.
    pub threshold: f64,
    pub initial_err: f64,
    /// Iteration indices where the mean error broke the curve.
    pub flagged: Vec<usize>,
    /// Mean error norm over the last tenth of the iterations.
    pub plateau: f64,
    pub mean_err: Vec<f64>,
    pub bound: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Runs uniform RK on noisily perturbed copies of one fixed system from one
/// fixed initial estimate, drawing fresh noise per trial, and checks the
/// sample-mean error norm at every k against
/// (1 - 1/R)^(k/2) ||e_0|| + sqrt(R) * level + 3 standard errors.
pub fn noisy_threshold_experiment(
    spec: &ExperimentSpec,
    level: f64,
) -> Result<NoisyReport, ExperimentError> {
    spec.validate()?;
    if level <= 0.0 || !level.is_finite() {
        return Err(ExperimentError::InvalidSpec(format!(
            "noise level must be positive and finite, got {level}"
        )));
    }
    let master = spec.generator.seed;
    let system = generators::generate_system(&spec.generator)
        .map_err(|source| ExperimentError::Generator { trial: 0, source })?;
    let x0 = generators::initial_estimate(spec.generator.n, derive_seed(master, 1));
    let solution = system
        .solution()
        .expect("generated systems carry ground truth");
    let initial_err = norm2_sq(&sub(&x0, solution)).sqrt();
    let cond = analysis::scaled_condition_number(system.matrix())
        .map_err(|source| ExperimentError::Analysis { trial: 0, source })?;
    let r = cond.scaled_condition;
    let threshold = r.sqrt() * level;

    let curves: Vec<Vec<f64>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let t = trial as u64;
            let (noisy, w) = generators::add_noise(&system, level, derive_seed(master, 2000 + t))
                .map_err(|source| ExperimentError::Generator { trial, source })?;
            debug_assert!(w.iter().all(|wi| wi.abs() <= level));
            let config = SolverConfig {
                method: Method::RkUniform,
                max_iterations: spec.iterations,
                stop_tolerance: 0.0,
                seed: derive_seed(master, 3000 + t),
                replacement: Replacement::With,
            };
            solvers::solve_from(&noisy, &config, &x0)
                .map(|tr| tr.errors_sq.iter().map(|e| e.sqrt()).collect::<Vec<f64>>())
                .map_err(|source| ExperimentError::Solver { trial, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let points = spec.iterations + 1;
    let (mean, stderr) = mean_and_stderr(&curves, points);
    let bound: Vec<f64> = (0..points as u64)
        .map(|k| analysis::bound_rk(r, k).sqrt() * initial_err + threshold)
        .collect();
    let flagged: Vec<usize> = (0..points)
        .filter(|&k| mean[k] > bound[k] * (1.0 + 1e-12) + 3.0 * stderr[k])
        .collect();
    let tail = (points / 10).max(1);
    let plateau = mean[points - tail..].iter().sum::<f64>() / tail as f64;

    Ok(NoisyReport {
        trials: spec.trials,
        iterations: spec.iterations,
        scaled_condition: r,
        threshold,
        initial_err,
        flagged,
        plateau,
        mean_err: mean,
        bound,
        stderr,
    })
}

/// Pointwise mean and standard error of the mean over equal-length curves.
fn mean_and_stderr(curves: &[Vec<f64>], points: usize) -> (Vec<f64>, Vec<f64>) {
    let trials = curves.len();
    let inv = 1.0 / trials as f64;
    let mut mean = vec![0.0; points];
    for curve in curves {
        for (i, &v) in curve.iter().enumerate() {
            mean[i] += v * inv;
        }
    }
    let mut stderr = vec![0.0; points];
    if trials > 1 {
        for curve in curves {
            for (i, &v) in curve.iter().enumerate() {
                stderr[i] += (v - mean[i]) * (v - mean[i]);
            }
        }
        for s in stderr.iter_mut() {
            *s = (*s / (trials - 1) as f64 / trials as f64).sqrt();
        }
    }
    (mean, stderr)
}

/// Tabulates the improvement factor D over the triangle
/// 0 <= delta <= Delta <= 1 at the given per-axis resolution, as
/// (delta, Delta, D) triples in row-major order.
pub fn dfactor_grid(resolution: usize) -> Result<Vec<(f64, f64, f64)>, ExperimentError> {
    if resolution < 2 {
        return Err(ExperimentError::InvalidSpec(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    let steps = (resolution - 1) as f64;
    let mut grid = Vec::with_capacity(resolution * (resolution + 1) / 2);
    for i in 0..resolution {
        let delta = i as f64 / steps;
        for j in i..resolution {
            let delta_max = j as f64 / steps;
            let d = analysis::improvement_factor(delta, delta_max)?;
            grid.push((delta, delta_max, d));
        }
    }
    Ok(grid)
}

/// Seeds chosen so the default preset runs land inside the figure-caption
/// coherence bands; override the seed to explore other draws.
/// Master seed a preset uses when none is supplied.
pub const PRESET_SEED: u64 = 2026;

/// Named figure configurations. `fig3` is the highly coherent 300x100 run;
/// `fig4a` through `fig4d` sweep c over {0.5, 0.2, -0.1, -0.5} with matrix
/// widths calibrated so the generated coherence profiles reproduce the
/// figure captions. Pass a seed to override the preset default.
pub fn preset(name: &str, seed: Option<u64>) -> Result<ExperimentSpec, ExperimentError> {
    let (c, n, iterations) = match name {
        "fig3" => (0.9, 100, 7000),
        "fig4a" => (0.5, 50, 600),
        "fig4b" => (0.2, 50, 800),
        "fig4c" => (-0.1, 58, 800),
        "fig4d" => (-0.5, 42, 800),
        other => {
            return Err(ExperimentError::InvalidSpec(format!(
                "unknown preset {other:?}; expected fig3, fig4a, fig4b, fig4c, or fig4d"
            )))
        }
    };
    let generator = GeneratorSpec::new(300, n, c, seed.unwrap_or(PRESET_SEED));
    Ok(ExperimentSpec::new(
        generator,
        iterations,
        vec![
            SolverConfig::new(Method::RkUniform, 0),
            SolverConfig::new(Method::TwoSubspace, 0),
        ],
    ))
}

/// Every preset name accepted by [`preset`].
pub const PRESET_NAMES: [&str; 5] = ["fig3", "fig4a", "fig4b", "fig4c", "fig4d"];
