//! Dense symmetric linear algebra over second-moment matrices.
//!
//! Every regression in this crate is solved in Gram form: the solver takes
//! `E[x_a x_b]` and `E[x_a y]` rather than raw data, so the same code path
//! serves exact population oracles and finite samples. Rank deficiency is
//! resolved by spectral truncation, which yields the minimum-Euclidean-norm
//! minimizer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative eigenvalue cutoff for spectral truncation: eigenvalues below
/// `RANK_TOL * lambda_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Relative threshold below which a negative eigenvalue is rejected as a
/// corrupted moment matrix rather than rounding noise.
const PSD_REJECT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("moment matrix is not PSD (min eigenvalue {min_eig:.3e}, max {max_eig:.3e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("moment matrix asymmetric at ({row},{col}): |a_ij - a_ji| = {delta:.3e}")]
    Asymmetric { row: usize, col: usize, delta: f64 },
    #[error("tridiagonal dimension must be at least 1")]
    EmptyTridiagonal,
}

/// A symmetric matrix of second moments `E[u_a u_b]` with one label per
/// tracked variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecondMomentMatrix {
    entries: Vec<f64>,
    labels: Vec<String>,
    n: usize,
}

impl SecondMomentMatrix {
    /// Builds from row-major rows, rejecting ragged input and asymmetry
    /// beyond 1e-12 relative to the largest entry.
    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self, NumericsError> {
        let n = rows.len();
        if labels.len() != n {
            return Err(NumericsError::DimensionMismatch(format!(
                "{} labels for a {n}x{n} matrix",
                labels.len()
            )));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(NumericsError::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in (i + 1)..n {
                let delta = (entries[i * n + j] - entries[j * n + i]).abs();
                if delta > 1e-12 * scale.max(1.0) {
                    return Err(NumericsError::Asymmetric { row: i, col: j, delta });
                }
            }
        }
        Ok(Self { entries, labels, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// `A w` for a weight vector of matching length.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.entries[i * n + j] * w[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// Output of [`solve_least_squares`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeastSquaresSolution {
    /// Minimum-norm weights over the input labels.
    pub weights: Vec<f64>,
    /// `E[y^2] - w . E[xy]`, clamped at zero.
    pub achieved_mse: f64,
    /// Number of spectral components retained by the truncation.
    pub effective_rank: usize,
}

/// Minimum-norm least squares from second moments: finds the `w` of least
/// Euclidean norm with `gram . w = cross` on the retained spectrum, and the
/// attained mean squared error against a target with second moment
/// `target_second_moment`.
pub fn solve_least_squares(
    gram: &SecondMomentMatrix,
    cross: &[f64],
    target_second_moment: f64,
) -> Result<LeastSquaresSolution, NumericsError> {
    let n = gram.dim();
    if cross.len() != n {
        return Err(NumericsError::DimensionMismatch(format!(
            "gram is {n}x{n} but cross has {} entries",
            cross.len()
        )));
    }
    if n == 0 {
        return Ok(LeastSquaresSolution {
            weights: vec![],
            achieved_mse: target_second_moment.max(0.0),
            effective_rank: 0,
        });
    }
    let eig = symmetric_eigen(&gram.entries, n);
    let max_eig = eig.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_eig = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_REJECT_TOL * max_eig.max(0.0) && min_eig < 0.0 {
        return Err(NumericsError::NotPsd { min_eig, max_eig });
    }
    let cutoff = RANK_TOL * max_eig.max(0.0);
    let mut weights = vec![0.0; n];
    let mut rank = 0usize;
    for (idx, &lambda) in eig.values.iter().enumerate() {
        if lambda <= cutoff || lambda <= 0.0 {
            continue;
        }
        rank += 1;
        // projection of cross onto this eigenvector, scaled by 1/lambda
        let mut proj = 0.0;
        for i in 0..n {
            proj += eig.vector(idx, i) * cross[i];
        }
        let coeff = proj / lambda;
        for (i, w) in weights.iter_mut().enumerate() {
            *w += coeff * eig.vector(idx, i);
        }
    }
    let explained: f64 = weights.iter().zip(cross).map(|(w, c)| w * c).sum();
    Ok(LeastSquaresSolution {
        weights,
        achieved_mse: (target_second_moment - explained).max(0.0),
        effective_rank: rank,
    })
}

/// Smallest eigenvalue of a symmetric moment matrix.
pub fn min_eigenvalue(gram: &SecondMomentMatrix) -> Result<f64, NumericsError> {
    if gram.dim() == 0 {
        return Err(NumericsError::DimensionMismatch("empty matrix".into()));
    }
    let eig = symmetric_eigen(&gram.entries, gram.dim());
    Ok(eig.values.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Residual error of predicting the last latent factor from the suffix
/// construction's tridiagonal Gram of size `m`: builds the matrix with 2 on
/// the diagonal and -1 off it, inverts the first column by elimination, and
/// returns `1 - (C^{-1})_{11}`. Serves as the independent oracle for the
/// closed form `1/(m+1)`.
pub fn tridiag_suffix_mse(m: usize) -> Result<f64, NumericsError> {
    if m == 0 {
        return Err(NumericsError::EmptyTridiagonal);
    }
    let mut a = vec![0.0f64; m * m];
    for i in 0..m {
        a[i * m + i] = 2.0;
        if i + 1 < m {
            a[i * m + i + 1] = -1.0;
            a[(i + 1) * m + i] = -1.0;
        }
    }
    let mut e1 = vec![0.0; m];
    e1[0] = 1.0;
    let col = solve_dense(&mut a, &mut e1, m)?;
    Ok(1.0 - col[0])
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
/// Deliberately a separate path from the spectral solver so the two can
/// cross-check each other.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>, NumericsError> {
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(NumericsError::DimensionMismatch(
                "singular system in dense solve".into(),
            ));
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in (row + 1)..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}

pub(crate) struct Eigen {
    pub values: Vec<f64>,
    // column-major eigenvectors: vector k occupies entries [k*n, (k+1)*n)
    vectors: Vec<f64>,
    n: usize,
}

impl Eigen {
    #[inline]
    pub fn vector(&self, k: usize, i: usize) -> f64 {
        self.vectors[k * self.n + i]
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Plenty for the
/// desk-scale systems this crate solves (tens of variables).
pub(crate) fn symmetric_eigen(matrix: &[f64], n: usize) -> Eigen {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for k in 0..n {
        v[k * n + k] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum();
    let tol = 1e-30 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[p * n + k];
                    let vkq = v[q * n + k];
                    v[p * n + k] = c * vkp - s * vkq;
                    v[q * n + k] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    Eigen { values, vectors: v, n }
}
