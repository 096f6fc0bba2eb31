//! Second-moment oracles.
//!
//! Training and every diagnostic in this crate consume only expectations
//! `E[u v]` over pairs of tracked variables: features, the label, a
//! constant, and registered predictors. Two implementations exist with the
//! same surface:
//!
//! - [`LatentLinearOracle`] represents each variable as a coefficient
//!   vector over independent unit-variance latent factors (plus a constant
//!   component), so moments are exact dot products.
//! - [`SampleOracle`] holds a finite data matrix and computes empirical
//!   averages; registered predictors are stored as evaluated columns.

use crate::{TOL_EXACT, TOL_SAMPLE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type PredictorId = usize;

/// A tracked variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Var {
    Feature(usize),
    Label,
    /// The constant-one variable: `E[Constant^2] = 1`,
    /// `E[Constant * u] = E[u]`.
    Constant,
    Predictor(PredictorId),
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("feature index {index} out of range (d = {d})")]
    FeatureOutOfRange { index: usize, d: usize },
    #[error("unknown predictor id {0}")]
    UnknownPredictor(PredictorId),
    #[error("column length {got} does not match sample size {expected}")]
    ColumnLengthMismatch { got: usize, expected: usize },
    #[error("sample oracle needs at least one row")]
    EmptySample,
    #[error("latent construction needs k >= 2, got {0}")]
    LatentDimensionTooSmall(usize),
}

/// A linear combination of tracked variables; the working currency of the
/// diagnostics module.
pub type LinComb = Vec<(Var, f64)>;

pub trait MomentOracle {
    fn feature_count(&self) -> usize;

    /// Second moment `E[a b]`.
    fn moment(&self, a: Var, b: Var) -> Result<f64, OracleError>;

    /// Registers `sum_i w_i * v_i` as a new tracked predictor and returns
    /// its id.
    fn register_combination(&mut self, terms: &[(Var, f64)]) -> Result<PredictorId, OracleError>;

    fn predictor_count(&self) -> usize;

    /// Orthogonality tolerance appropriate for this oracle's arithmetic.
    fn solver_tolerance(&self) -> f64;

    fn as_sample(&self) -> Option<&SampleOracle> {
        None
    }

    fn as_sample_mut(&mut self) -> Option<&mut SampleOracle> {
        None
    }

    /// `E[u v]` for linear combinations, by bilinear expansion.
    fn comb_moment(&self, u: &[(Var, f64)], v: &[(Var, f64)]) -> Result<f64, OracleError> {
        let mut acc = 0.0;
        for &(a, ca) in u {
            if ca == 0.0 {
                continue;
            }
            for &(b, cb) in v {
                if cb == 0.0 {
                    continue;
                }
                acc += ca * cb * self.moment(a, b)?;
            }
        }
        Ok(acc)
    }

    /// Mean squared error `E[(f - y)^2]` of a linear-combination predictor.
    fn mse_of(&self, f: &[(Var, f64)]) -> Result<f64, OracleError> {
        let mut resid: LinComb = f.to_vec();
        resid.push((Var::Label, -1.0));
        self.comb_moment(&resid, &resid)
    }
}

// ---------------------------------------------------------------------------
// Exact latent-Gaussian oracle
// ---------------------------------------------------------------------------

/// Coefficients over independent unit-variance latent factors plus a
/// constant offset, so that `E[u v] = <u_z, v_z> + u_c * v_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVec {
    pub z: Vec<f64>,
    pub constant: f64,
}

impl LatentVec {
    fn zeros(k: usize) -> Self {
        Self { z: vec![0.0; k], constant: 0.0 }
    }

    fn dot(&self, other: &Self) -> f64 {
        let zz: f64 = self.z.iter().zip(&other.z).map(|(a, b)| a * b).sum();
        zz + self.constant * other.constant
    }
}

/// Exact moment oracle for distributions that are linear images of
/// independent standard Gaussians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentLinearOracle {
    latent_dim: usize,
    features: Vec<LatentVec>,
    label: LatentVec,
    predictors: Vec<LatentVec>,
}

impl LatentLinearOracle {
    pub fn new(latent_dim: usize, features: Vec<LatentVec>, label: LatentVec) -> Self {
        debug_assert!(features.iter().all(|f| f.z.len() == latent_dim));
        debug_assert_eq!(label.z.len(), latent_dim);
        Self { latent_dim, features, label, predictors: Vec::new() }
    }

    /// The hard instance for depth lower bounds: latent factors
    /// `z_1..z_k`, features `x_1 = z_1`, `x_i = z_i - z_{i-1}`, label
    /// `Y = z_k`. The sum of all features reconstructs the label exactly,
    /// yet each feature alone is pure noise with respect to it.
    pub fn lower_bound(k: usize) -> Result<Self, OracleError> {
        if k < 2 {
            return Err(OracleError::LatentDimensionTooSmall(k));
        }
        let mut features = Vec::with_capacity(k);
        for i in 0..k {
            let mut v = LatentVec::zeros(k);
            v.z[i] = 1.0;
            if i > 0 {
                v.z[i - 1] = -1.0;
            }
            features.push(v);
        }
        let mut label = LatentVec::zeros(k);
        label.z[k - 1] = 1.0;
        Ok(Self::new(k, features, label))
    }

    /// Two features, two agents, no aggregation: `x_1` and `y` independent
    /// standard Gaussians, `x_2 = y - x_1`. Jointly the features predict
    /// `y` perfectly; alone, `x_1` is worthless.
    pub fn intro_counterexample() -> Self {
        let x1 = LatentVec { z: vec![1.0, 0.0], constant: 0.0 };
        let x2 = LatentVec { z: vec![-1.0, 1.0], constant: 0.0 };
        let label = LatentVec { z: vec![0.0, 1.0], constant: 0.0 };
        Self::new(2, vec![x1, x2], label)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn resolve(&self, v: Var) -> Result<LatentVec, OracleError> {
        match v {
            Var::Feature(i) => self
                .features
                .get(i)
                .cloned()
                .ok_or(OracleError::FeatureOutOfRange { index: i, d: self.features.len() }),
            Var::Label => Ok(self.label.clone()),
            Var::Constant => {
                Ok(LatentVec { z: vec![0.0; self.latent_dim], constant: 1.0 })
            }
            Var::Predictor(id) => {
                self.predictors.get(id).cloned().ok_or(OracleError::UnknownPredictor(id))
            }
        }
    }

    /// Latent representation of a registered predictor.
    pub fn predictor_vec(&self, id: PredictorId) -> Result<&LatentVec, OracleError> {
        self.predictors.get(id).ok_or(OracleError::UnknownPredictor(id))
    }
}

impl MomentOracle for LatentLinearOracle {
    fn feature_count(&self) -> usize {
        self.features.len()
    }

    fn moment(&self, a: Var, b: Var) -> Result<f64, OracleError> {
        Ok(self.resolve(a)?.dot(&self.resolve(b)?))
    }

    fn register_combination(&mut self, terms: &[(Var, f64)]) -> Result<PredictorId, OracleError> {
        let mut acc = LatentVec::zeros(self.latent_dim);
        for &(v, c) in terms {
            let lv = self.resolve(v)?;
            for (a, b) in acc.z.iter_mut().zip(&lv.z) {
                *a += c * b;
            }
            acc.constant += c * lv.constant;
        }
        self.predictors.push(acc);
        Ok(self.predictors.len() - 1)
    }

    fn predictor_count(&self) -> usize {
        self.predictors.len()
    }

    fn solver_tolerance(&self) -> f64 {
        TOL_EXACT
    }
}

// ---------------------------------------------------------------------------
// Finite-sample oracle
// ---------------------------------------------------------------------------

/// Empirical moment oracle over `m` rows. Columns are stored
/// feature-major; registered predictors keep their evaluated column so
/// downstream agents can use them as inputs.
#[derive(Debug, Clone)]
pub struct SampleOracle {
    m: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    predictors: Vec<Vec<f64>>,
}

impl SampleOracle {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, OracleError> {
        let m = labels.len();
        if m == 0 {
            return Err(OracleError::EmptySample);
        }
        for col in &features {
            if col.len() != m {
                return Err(OracleError::ColumnLengthMismatch { got: col.len(), expected: m });
            }
        }
        Ok(Self { m, features, labels, predictors: Vec::new() })
    }

    pub fn sample_size(&self) -> usize {
        self.m
    }

    pub fn feature_column(&self, i: usize) -> Result<&[f64], OracleError> {
        self.features
            .get(i)
            .map(Vec::as_slice)
            .ok_or(OracleError::FeatureOutOfRange { index: i, d: self.features.len() })
    }

    pub fn label_column(&self) -> &[f64] {
        &self.labels
    }

    pub fn predictor_column(&self, id: PredictorId) -> Result<&[f64], OracleError> {
        self.predictors.get(id).map(Vec::as_slice).ok_or(OracleError::UnknownPredictor(id))
    }

    /// Registers an already-evaluated column, e.g. the output of a
    /// non-linear pool that cannot be expressed as a combination of
    /// tracked variables.
    pub fn register_column(&mut self, column: Vec<f64>) -> Result<PredictorId, OracleError> {
        if column.len() != self.m {
            return Err(OracleError::ColumnLengthMismatch { got: column.len(), expected: self.m });
        }
        self.predictors.push(column);
        Ok(self.predictors.len() - 1)
    }

    fn column(&self, v: Var) -> Result<ColumnRef<'_>, OracleError> {
        match v {
            Var::Feature(i) => Ok(ColumnRef::Slice(self.feature_column(i)?)),
            Var::Label => Ok(ColumnRef::Slice(&self.labels)),
            Var::Constant => Ok(ColumnRef::Ones),
            Var::Predictor(id) => Ok(ColumnRef::Slice(self.predictor_column(id)?)),
        }
    }

    /// Empirical mean of the entrywise product of two columns.
    pub fn column_product_mean(&self, a: &[f64], b: &[f64]) -> f64 {
        mean_product(a, b)
    }
}

enum ColumnRef<'a> {
    Slice(&'a [f64]),
    Ones,
}

impl MomentOracle for SampleOracle {
    fn feature_count(&self) -> usize {
        self.features.len()
    }

    fn moment(&self, a: Var, b: Var) -> Result<f64, OracleError> {
        let ca = self.column(a)?;
        let cb = self.column(b)?;
        Ok(match (ca, cb) {
            (ColumnRef::Ones, ColumnRef::Ones) => 1.0,
            (ColumnRef::Slice(s), ColumnRef::Ones) | (ColumnRef::Ones, ColumnRef::Slice(s)) => {
                neumaier_sum(s.iter().copied()) / self.m as f64
            }
            (ColumnRef::Slice(x), ColumnRef::Slice(y)) => mean_product(x, y),
        })
    }

    fn register_combination(&mut self, terms: &[(Var, f64)]) -> Result<PredictorId, OracleError> {
        let mut col = vec![0.0; self.m];
        for &(v, c) in terms {
            match self.column(v)? {
                ColumnRef::Ones => col.iter_mut().for_each(|x| *x += c),
                ColumnRef::Slice(s) => {
                    for (x, v) in col.iter_mut().zip(s) {
                        *x += c * v;
                    }
                }
            }
        }
        self.predictors.push(col);
        Ok(self.predictors.len() - 1)
    }

    fn predictor_count(&self) -> usize {
        self.predictors.len()
    }

    fn solver_tolerance(&self) -> f64 {
        TOL_SAMPLE
    }

    fn as_sample(&self) -> Option<&SampleOracle> {
        Some(self)
    }

    fn as_sample_mut(&mut self) -> Option<&mut SampleOracle> {
        Some(self)
    }
}

/// Draws `m` i.i.d. rows from a latent-Gaussian oracle and materializes a
/// finite-sample counterpart. Deterministic under `seed`.
pub fn sample_from_latent(oracle: &LatentLinearOracle, m: usize, seed: u64) -> SampleOracle {
    assert!(m >= 1, "sample size must be positive");
    let k = oracle.latent_dim();
    let d = oracle.feature_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = vec![vec![0.0f64; m]; d];
    let mut labels = vec![0.0f64; m];
    let mut z = vec![0.0f64; k];
    for row in 0..m {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for (j, col) in features.iter_mut().enumerate() {
            let fv = &oracle.features[j];
            let mut acc = fv.constant;
            for (c, zi) in fv.z.iter().zip(&z) {
                acc += c * zi;
            }
            col[row] = acc;
        }
        let mut acc = oracle.label.constant;
        for (c, zi) in oracle.label.z.iter().zip(&z) {
            acc += c * zi;
        }
        labels[row] = acc;
    }
    SampleOracle::new(features, labels).expect("m >= 1")
}

/// Neumaier-compensated mean of an entrywise product; keeps million-row
/// moments accurate enough for the exact-vs-sampled comparisons.
pub(crate) fn mean_product(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    neumaier_sum(a.iter().zip(b).map(|(x, y)| x * y)) / a.len() as f64
}

pub(crate) fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
