//! Coherence and conditioning diagnostics for standardized systems, plus the
//! expected-convergence bound curves they feed.
//!
//! For a matrix with unit rows, the coherence pair (delta, Delta) is the
//! minimum and maximum absolute inner product over distinct rows. The
//! improvement factor D built from them quantifies how much a two-subspace
//! projection step gains over two independent single-row steps, and the
//! scaled condition number R = ||A||_F^2 / sigma_min^2 sets the baseline
//! exponential rate.

use crate::linalg::{self, norm2, norm2_sq, sub, LinalgError, Matrix};
use thiserror::Error;

/// Pairwise inner products at or above this magnitude count as dependent rows.
pub const DEPENDENT_ROW_TOL: f64 = 1e-12;

/// Most negative pairwise inner product still treated as nonnegative.
const NONNEG_TOL: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least two rows, got {0}")]
    TooFewRows(usize),
    #[error("matrix is not standardized (row {row} has norm {norm})")]
    NotStandardized { row: usize, norm: f64 },
    #[error("rows {0} and {1} are numerically dependent")]
    DependentRows(usize, usize),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("contraction base {0} lies outside (0, 1)")]
    DegenerateBase(f64),
    #[error("rows {0} and {1} are negatively correlated")]
    NegativeCorrelation(usize, usize),
    #[error("rows {0} and {1} coincide, difference direction undefined")]
    ZeroDifference(usize, usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Coherence of a standardized matrix: the extreme absolute inner products
/// over distinct row pairs, with the improvement factor derived from them.
///
/// Invariant: `0 <= coherence_min <= coherence_max < 1` (exact 1 is rejected
/// as a dependent pair).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceProfile {
    /// delta: minimum |<a_j, a_k>| over j != k.
    pub coherence_min: f64,
    /// Delta: maximum |<a_j, a_k>| over j != k.
    pub coherence_max: f64,
    /// D: the two-subspace improvement factor for this coherence range.
    pub improvement: f64,
}

/// Frobenius mass, smallest singular value, and their quotient
/// R = ||A||_F^2 / sigma_min^2, the expected number of iterations a
/// single-row randomized sweep needs per accuracy digit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningProfile {
    pub frobenius_sq: f64,
    pub sigma_min: f64,
    pub scaled_condition: f64,
}

/// Refinement pair for matrices whose rows are all nonnegatively correlated:
/// `e_factor` = 4 delta^3 and `q_factor` = the scaled condition number of the
/// normalized pairwise row differences. Their quotient tightens the
/// two-subspace contraction base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRefinement {
    pub e_factor: f64,
    pub q_factor: f64,
}

fn require_standardized(a: &Matrix) -> Result<(), AnalysisError> {
    for i in 0..a.nrows() {
        let norm = norm2(a.row(i));
        if (norm - 1.0).abs() > linalg::UNIT_ROW_TOL {
            return Err(AnalysisError::NotStandardized { row: i, norm });
        }
    }
    Ok(())
}

/// Scans all distinct row pairs of a standardized matrix for the coherence
/// extremes. Errors when any pair is numerically dependent
/// (|inner product| >= 1 - 1e-12), since both the improvement factor and the
/// two-subspace step are undefined there.
pub fn coherence(a: &Matrix) -> Result<CoherenceProfile, AnalysisError> {
    if a.nrows() < 2 {
        return Err(AnalysisError::TooFewRows(a.nrows()));
    }
    require_standardized(a)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..a.nrows() {
        for k in (j + 1)..a.nrows() {
            let c = linalg::dot(a.row(j), a.row(k)).abs();
            if c >= 1.0 - DEPENDENT_ROW_TOL {
                return Err(AnalysisError::DependentRows(j, k));
            }
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    Ok(CoherenceProfile {
        coherence_min: lo,
        coherence_max: hi,
        improvement: improvement_factor(lo, hi)?,
    })
}

/// The two-subspace improvement factor
/// `D = min{ f(delta), f(Delta) }` with `f(t) = t^2 (1 - t) / (1 + t)`,
/// for `0 <= delta <= delta_max <= 1`.
///
/// `f` vanishes at both endpoints of [0, 1] and peaks near 0.618, so D is
/// zero whenever the coherence range touches either extreme, and never
/// exceeds roughly 0.09.
pub fn improvement_factor(delta: f64, delta_max: f64) -> Result<f64, AnalysisError> {
    if !(0.0..=1.0).contains(&delta) || !(delta..=1.0).contains(&delta_max) {
        return Err(AnalysisError::Domain(format!(
            "need 0 <= delta <= delta_max <= 1, got delta = {delta}, delta_max = {delta_max}"
        )));
    }
    let f = |t: f64| t * t * (1.0 - t) / (1.0 + t);
    Ok(f(delta).min(f(delta_max)))
}

/// Scaled condition number of a full-rank tall matrix.
pub fn scaled_condition_number(a: &Matrix) -> Result<ConditioningProfile, AnalysisError> {
    let sigma_min = linalg::smallest_singular_value(a)?;
    let frobenius_sq = a.frobenius_sq();
    Ok(ConditioningProfile {
        frobenius_sq,
        sigma_min,
        scaled_condition: frobenius_sq / (sigma_min * sigma_min),
    })
}

/// Scaled condition number after the variance-flattening row weighting
/// `w_j = sqrt(||A||_F^2 - ||a_j||^2)`: returns the profile of the weighted
/// matrix. For a standardized matrix every weight equals sqrt(m - 1), so the
/// weighting is a uniform scaling and the quotient matches
/// [`scaled_condition_number`] up to roundoff.
pub fn weighted_condition_number(a: &Matrix) -> Result<ConditioningProfile, AnalysisError> {
    if a.nrows() < 2 {
        return Err(AnalysisError::TooFewRows(a.nrows()));
    }
    let frob_sq = a.frobenius_sq();
    let mut rows = Vec::with_capacity(a.nrows());
    for j in 0..a.nrows() {
        let w_sq = frob_sq - norm2_sq(a.row(j));
        if w_sq <= 0.0 {
            return Err(AnalysisError::Domain(format!(
                "row {j} carries the entire Frobenius mass, weight would vanish"
            )));
        }
        let w = w_sq.sqrt();
        rows.push(a.row(j).iter().map(|v| w * v).collect::<Vec<f64>>());
    }
    scaled_condition_number(&Matrix::from_rows(&rows)?)
}

/// `base^k` by binary exponentiation. Shared by both bound curves so that
/// squaring the base and halving the exponent are bit-for-bit interchangeable.
fn pow_int(base: f64, mut exp: u64) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// Expected squared-error contraction after `k` single-row randomized steps:
/// `(1 - 1/R)^k`. Requires `R >= 1`.
pub fn bound_rk(r: f64, k: u64) -> f64 {
    assert!(
        r >= 1.0,
        "scaled condition number must be at least 1, got {r}"
    );
    pow_int(1.0 - 1.0 / r, k)
}

/// Contraction base of the two-subspace bound: `(1 - 1/R)^2 - D/R`, clamped
/// at zero. Requires `R >= 1` and `D >= 0`.
pub fn two_subspace_base(r: f64, d: f64) -> f64 {
    assert!(
        r >= 1.0,
        "scaled condition number must be at least 1, got {r}"
    );
    assert!(d >= 0.0, "improvement factor must be nonnegative, got {d}");
    let t = 1.0 - 1.0 / r;
    (t * t - d / r).max(0.0)
}

/// Expected squared-error contraction after `k` two-subspace steps:
/// `((1 - 1/R)^2 - D/R)^k`. With `D = 0` this reduces, bit for bit, to
/// [`bound_rk`] at `2k` steps.
pub fn bound_two_subspace(r: f64, d: f64, k: u64) -> f64 {
    pow_int(two_subspace_base(r, d), k)
}

/// Contraction base refined by the nonnegative-correlation pair
/// `(E, Q) = (e_factor, q_factor)`: `(1 - 1/R)^2 - D/R - E/Q`, clamped at
/// zero. An infinite `q_factor` (rank-deficient difference set) contributes
/// nothing.
pub fn refined_two_subspace_base(r: f64, d: f64, e_factor: f64, q_factor: f64) -> f64 {
    let correction = if q_factor.is_infinite() {
        0.0
    } else {
        e_factor / q_factor
    };
    (two_subspace_base(r, d) - correction).max(0.0)
}

/// Iterations the two-subspace bound needs to drive the expected error below
/// `eps` times the initial error: `2 ln(eps) / ln(base)`, as a real number.
/// Requires `eps` in (0, 1]; errors when the contraction base degenerates.
pub fn iterations_to_accuracy(r: f64, d: f64, eps: f64) -> Result<f64, AnalysisError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(AnalysisError::Domain(format!(
            "accuracy must lie in (0, 1], got {eps}"
        )));
    }
    let base = two_subspace_base(r, d);
    if base <= 0.0 || base >= 1.0 {
        return Err(AnalysisError::DegenerateBase(base));
    }
    Ok((2.0 * eps.ln() / base.ln()).max(0.0))
}

/// Smallest n-column singular value of a row stream, computed through the
/// Gram matrix. Eigenvalues at or below `n * eps * lambda_max` count as zero.
fn gram_sigma_min(n: usize, rows: impl Iterator<Item = Vec<f64>>) -> f64 {
    let mut gram = vec![0.0f64; n * n];
    for w in rows {
        debug_assert_eq!(w.len(), n);
        for i in 0..n {
            for j in i..n {
                gram[i * n + j] += w[i] * w[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            gram[i * n + j] = gram[j * n + i];
        }
    }
    let g = nalgebra::DMatrix::from_row_slice(n, n, &gram);
    let eig = nalgebra::SymmetricEigen::try_new(g, f64::EPSILON, 0)
        .expect("symmetric eigendecomposition with unlimited iterations converges");
    let lambda_max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let lambda_min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lambda_min <= n as f64 * f64::EPSILON * lambda_max {
        0.0
    } else {
        lambda_min.sqrt()
    }
}

/// Refinement pair for a standardized matrix whose rows are pairwise
/// nonnegatively correlated: `e_factor = 4 delta^3`, and `q_factor` is the
/// scaled condition number of the matrix stacking every normalized ordered
/// row difference `(a_j - a_i) / ||a_j - a_i||`, `i != j`.
///
/// The difference stack has `m^2 - m` rows, so its smallest singular value is
/// computed through the n-by-n Gram matrix rather than by materializing the
/// stack; the squared conditioning this costs is harmless here because the
/// quotient only reports a bound refinement. When the differences do not span
/// (always the case for m = 2 and n >= 2), `q_factor` is infinite and the
/// refinement term is zero.
pub fn nonneg_correlation_bound(a: &Matrix) -> Result<CorrelationRefinement, AnalysisError> {
    let m = a.nrows();
    if m < 2 {
        return Err(AnalysisError::TooFewRows(m));
    }
    require_standardized(a)?;
    let mut delta = f64::INFINITY;
    for j in 0..m {
        for k in (j + 1)..m {
            let c = linalg::dot(a.row(j), a.row(k));
            if c < NONNEG_TOL {
                return Err(AnalysisError::NegativeCorrelation(j, k));
            }
            let diff_norm = norm2(&sub(a.row(j), a.row(k)));
            if diff_norm <= linalg::ZERO_ROW_TOL {
                return Err(AnalysisError::ZeroDifference(j, k));
            }
            delta = delta.min(c.abs());
        }
    }
    let pair_count = (m * m - m) as f64;
    let n = a.ncols();
    let sigma_min = if (m * m - m) < n {
        0.0
    } else {
        let rows = (0..m).flat_map(move |i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)));
        gram_sigma_min(
            n,
            rows.map(|(i, j)| {
                let mut w = sub(a.row(j), a.row(i));
                let norm = norm2(&w);
                w.iter_mut().for_each(|v| *v /= norm);
                w
            }),
        )
    };
    let q_factor = if sigma_min == 0.0 {
        f64::INFINITY
    } else {
        pair_count / (sigma_min * sigma_min)
    };
    Ok(CorrelationRefinement {
        e_factor: 4.0 * delta * delta * delta,
        q_factor,
    })
}
