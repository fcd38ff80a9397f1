//! Dense row-major matrices and the small set of vector operations the
//! solvers need: inner products, norms, hyperplane projections, row
//! standardization, and smallest singular values.
//!
//! Rows are stored contiguously so that row retrieval is a slice borrow,
//! which keeps the per-iteration cost of row-action methods at O(n).

use thiserror::Error;

/// Relative tolerance under which a row counts as unit-norm.
pub const UNIT_ROW_TOL: f64 = 1e-12;

/// Absolute row-norm floor below which a row counts as zero.
pub const ZERO_ROW_TOL: f64 = 1e-14;

/// Smallest singular value floor for a system to count as full column rank.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must have at least one row and one column")]
    Empty,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("row {0} has norm below {ZERO_ROW_TOL:e}")]
    ZeroRow(usize),
    #[error("row norm {norm} is not within {UNIT_ROW_TOL:e} of 1")]
    NotUnitRow { norm: f64 },
    #[error("matrix is rank deficient (smallest singular value {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },
    #[error("system is inconsistent: residual {residual:e} at the claimed solution")]
    Inconsistent { residual: f64 },
}

/// Dense matrix with entries stored row-major.
///
/// Construction validates that every entry is finite; all other invariants
/// (unit rows, full rank) are checked by the operations that need them.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. Errors on empty shapes, length
    /// mismatches, and non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::Empty);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                context: format!(
                    "{rows}x{cols} matrix needs {} entries, got {}",
                    rows * cols,
                    data.len()
                ),
            });
        }
        for (idx, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite {
                    row: idx / cols,
                    col: idx % cols,
                });
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(LinalgError::Empty);
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(LinalgError::DimensionMismatch {
                context: format!("expected rows of length {cols}, got {}", bad.len()),
            });
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_major(rows.len(), cols, data)
    }

    /// Builds an `rows x cols` matrix with entry `(i, j)` given by `f(i, j)`.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_row_major(rows, cols, data)
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }).expect("identity is finite")
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    /// Borrows row `i` as a contiguous slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Row-major view of all entries.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Euclidean norm of each row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|i| norm2(self.row(i))).collect()
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// True when every row norm lies within [`UNIT_ROW_TOL`] of 1.
    pub fn is_standardized(&self) -> bool {
        (0..self.rows).all(|i| (norm2(self.row(i)) - 1.0).abs() <= UNIT_ROW_TOL)
    }

    /// Matrix-vector product `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// Entrywise scaling by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }
}

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Squared Euclidean norm.
pub fn norm2_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// `y += alpha * x` in place.
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    assert_eq!(y.len(), x.len(), "axpy dimension mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Componentwise difference `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "sub dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Scales every row of `a` to unit Euclidean norm and the right-hand side
/// entries to match, returning the standardized matrix and the original row
/// norms. The scaled system has the same solution set as the original.
pub fn standardize(a: &Matrix) -> Result<(Matrix, Vec<f64>), LinalgError> {
    let norms = a.row_norms();
    if let Some(i) = norms.iter().position(|&n| n <= ZERO_ROW_TOL) {
        return Err(LinalgError::ZeroRow(i));
    }
    let mut data = Vec::with_capacity(a.nrows() * a.ncols());
    for (i, &norm) in norms.iter().enumerate() {
        data.extend(a.row(i).iter().map(|v| v / norm));
    }
    let scaled = Matrix::from_row_major(a.nrows(), a.ncols(), data)?;
    Ok((scaled, norms))
}

/// Orthogonal projection of `x` onto the hyperplane `{ z : <a, z> = b }` for
/// a unit-norm row `a`. Errors when `a` is not unit-norm or lengths differ.
pub fn project_hyperplane(x: &[f64], a: &[f64], b: f64) -> Result<Vec<f64>, LinalgError> {
    if x.len() != a.len() {
        return Err(LinalgError::DimensionMismatch {
            context: format!(
                "estimate has length {}, row has length {}",
                x.len(),
                a.len()
            ),
        });
    }
    let norm = norm2(a);
    if (norm - 1.0).abs() > UNIT_ROW_TOL {
        return Err(LinalgError::NotUnitRow { norm });
    }
    let c = b - dot(a, x);
    let mut out = x.to_vec();
    axpy(&mut out, c, a);
    Ok(out)
}

/// Smallest singular value of a tall matrix (`rows >= cols`).
///
/// Errors with [`LinalgError::RankDeficient`] when the computed value falls
/// at or below `1e-12 * ||A||_F`, so callers can rely on a usable inverse
/// norm. Accuracy is limited by the SVD itself, around 1e-10 relative for
/// condition numbers up to 1e4, far below the statistical noise of any
/// experiment built on top.
pub fn smallest_singular_value(a: &Matrix) -> Result<f64, LinalgError> {
    if a.nrows() < a.ncols() {
        return Err(LinalgError::DimensionMismatch {
            context: format!("need rows >= cols, got {}x{}", a.nrows(), a.ncols()),
        });
    }
    let sigma_min = raw_sigma_min(a);
    let floor = RANK_TOL * a.frobenius_sq().sqrt();
    if sigma_min <= floor {
        return Err(LinalgError::RankDeficient { sigma_min });
    }
    Ok(sigma_min)
}

/// Smallest singular value with no rank gate; 0 is a legitimate return.
pub(crate) fn raw_sigma_min(a: &Matrix) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(a.nrows(), a.ncols(), a.data());
    let svd = nalgebra::SVD::try_new_unordered(m, false, false, f64::EPSILON, 0)
        .expect("SVD with unlimited iterations converges");
    svd.singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// A consistent linear system `A x = b`, optionally carrying the solution it
/// was built from.
///
/// Construction enforces: matching dimensions, full column rank
/// (smallest singular value above `1e-12`), and, when a solution is given,
/// consistency `||A x* - b|| <= 1e-10 * max(1, ||b||)`. Noisy right-hand
/// sides deliberately break consistency and are built through a crate-private
/// constructor that keeps the noiseless solution for error measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: Matrix,
    b: Vec<f64>,
    solution: Option<Vec<f64>>,
}

impl LinearSystem {
    pub fn new(a: Matrix, b: Vec<f64>, solution: Option<Vec<f64>>) -> Result<Self, LinalgError> {
        if b.len() != a.nrows() {
            return Err(LinalgError::DimensionMismatch {
                context: format!("matrix has {} rows, rhs has {} entries", a.nrows(), b.len()),
            });
        }
        if let Some(idx) = b.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: idx, col: 0 });
        }
        let sigma_min = smallest_singular_value(&a)?;
        if sigma_min <= RANK_TOL {
            return Err(LinalgError::RankDeficient { sigma_min });
        }
        if let Some(x) = &solution {
            if x.len() != a.ncols() {
                return Err(LinalgError::DimensionMismatch {
                    context: format!(
                        "matrix has {} cols, solution has {} entries",
                        a.ncols(),
                        x.len()
                    ),
                });
            }
            let residual = norm2(&sub(&a.mul_vec(x), &b));
            if residual > 1e-10 * norm2(&b).max(1.0) {
                return Err(LinalgError::Inconsistent { residual });
            }
        }
        Ok(Self { a, b, solution })
    }

    /// Builds a system without the consistency check, for perturbed
    /// right-hand sides that keep the noiseless solution as ground truth.
    pub(crate) fn new_inconsistent(a: Matrix, b: Vec<f64>, solution: Option<Vec<f64>>) -> Self {
        debug_assert_eq!(b.len(), a.nrows());
        Self { a, b, solution }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn solution(&self) -> Option<&[f64]> {
        self.solution.as_deref()
    }

    /// `||A x - b||` for an arbitrary estimate.
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        norm2(&sub(&self.a.mul_vec(x), &self.b))
    }
}
