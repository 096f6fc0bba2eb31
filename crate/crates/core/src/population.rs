//! Exact engine for the hard latent-Gaussian instance.
//!
//! Every predictor that can arise on this distribution is a linear
//! combination of the latent factors, so the whole sequential process runs
//! in closed form: agents project the label onto the span of their inputs
//! in the latent basis, with no sampling and no general-purpose solver.
//! This is the independent route against which the generic training
//! machinery is checked.

use crate::graph::{Dag, FeatureAssignment};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Coefficients below this magnitude are treated as absent when reading a
/// predictor's support. The construction's coefficients are
/// well-conditioned rationals, far above this at any size this crate runs.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("construction needs k >= 2, got {0}")]
    KTooSmall(usize),
    #[error("passes must be at least 1")]
    NoPasses,
    #[error("suffix start j = {j} outside [2, {k}]")]
    SuffixOutOfRange { j: usize, k: usize },
    #[error("depth {depth} outside [1, {max}]")]
    DepthOutOfRange { depth: usize, max: usize },
    #[error("pass index {pass} outside [0, {passes}]")]
    PassOutOfRange { pass: usize, passes: usize },
    #[error("assignment has {agents} agents for a DAG of {nodes} nodes")]
    AssignmentMismatch { agents: usize, nodes: usize },
    #[error("assignment uses {d} features but the construction has {k}")]
    FeatureCountMismatch { d: usize, k: usize },
    #[error("decay fit needs at least 3 points with p >= 1 and error > 0")]
    DegenerateFit,
}

/// A vector of coefficients over the latent factors `z_0..z_{k-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZVector {
    pub coefficients: Vec<f64>,
}

impl ZVector {
    pub fn zeros(k: usize) -> Self {
        Self { coefficients: vec![0.0; k] }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self)
    }

    /// Latent indices carrying weight above [`SUPPORT_THRESHOLD`],
    /// 0-based and sorted.
    pub fn support(&self) -> Vec<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| c.abs() > SUPPORT_THRESHOLD)
            .map(|(i, _)| i)
            .collect()
    }

    fn axpy(&mut self, c: f64, other: &Self) {
        for (a, b) in self.coefficients.iter_mut().zip(&other.coefficients) {
            *a += c * b;
        }
    }
}

/// Feature `x_i` (0-based) of the construction over `k` latent factors.
fn feature_vec(k: usize, i: usize) -> ZVector {
    let mut v = ZVector::zeros(k);
    v.coefficients[i] = 1.0;
    if i > 0 {
        v.coefficients[i - 1] = -1.0;
    }
    v
}

fn label_vec(k: usize) -> ZVector {
    let mut v = ZVector::zeros(k);
    v.coefficients[k - 1] = 1.0;
    v
}

/// Projects `target` onto the span of `basis` by modified Gram-Schmidt
/// with re-orthogonalization. Returns the projection and the squared
/// residual norm, which is the population MSE when `target` is the label.
fn project(target: &ZVector, basis: &[&ZVector]) -> (ZVector, f64) {
    let k = target.coefficients.len();
    let mut ortho: Vec<ZVector> = Vec::with_capacity(basis.len());
    for &b in basis {
        let scale = b.norm2();
        let mut v = b.clone();
        for _ in 0..2 {
            for q in &ortho {
                let c = q.dot(&v);
                v.axpy(-c, q);
            }
        }
        let n2 = v.norm2();
        if n2 > 1e-16 * scale.max(1e-300) {
            let inv = 1.0 / n2.sqrt();
            for c in v.coefficients.iter_mut() {
                *c *= inv;
            }
            ortho.push(v);
        }
    }
    let mut pred = ZVector::zeros(k);
    for q in &ortho {
        pred.axpy(q.dot(target), q);
    }
    let mut resid = target.clone();
    resid.axpy(-1.0, &pred);
    (pred, resid.norm2())
}

/// One agent's state in the cyclic-path run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassStep {
    /// 1-based pass number.
    pub pass: usize,
    /// 1-based index within the pass; the agent observes feature
    /// `index - 1`.
    pub index: usize,
    /// 0-based position along the whole path.
    pub position: usize,
    pub predictor: ZVector,
    pub mse: f64,
}

/// Full trace of the cyclic-path process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassTrace {
    pub k: usize,
    pub passes: usize,
    /// True when the run extends past the `passes <= k - 1` regime that
    /// the convergence-rate bound covers.
    pub beyond_theorem_regime: bool,
    pub steps: Vec<PassStep>,
}

impl PassTrace {
    pub fn end_of_pass(&self, pass: usize) -> Result<&PassStep, PopulationError> {
        if pass == 0 || pass > self.passes {
            return Err(PopulationError::PassOutOfRange { pass, passes: self.passes });
        }
        Ok(&self.steps[pass * self.k - 1])
    }

    /// `(pass, mse)` at the end of each pass.
    pub fn end_of_pass_errors(&self) -> Vec<(f64, f64)> {
        (1..=self.passes)
            .map(|p| (p as f64, self.steps[p * self.k - 1].mse))
            .collect()
    }

    /// CSV lines: pass, index, mse, support size.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pass,index,position,mse,support_size\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.pass,
                s.index,
                s.position,
                s.mse,
                s.predictor.support().len()
            );
        }
        out
    }
}

/// Runs the cyclic-path process exactly: agent `j` (0-based) observes the
/// single feature `j mod k` and the predecessor's prediction, and solves
/// the population regression in the latent basis.
///
/// ```
/// let trace = daglearn::population::run_cyclic_path(10, 9)?;
/// assert!((trace.end_of_pass(1)?.mse - 0.5).abs() < 1e-12);
/// for p in 1..=9 {
///     assert!(trace.end_of_pass(p)?.mse >= 1.0 / (p as f64 + 1.0) - 1e-12);
/// }
/// # Ok::<(), daglearn::population::PopulationError>(())
/// ```
pub fn run_cyclic_path(k: usize, passes: usize) -> Result<PassTrace, PopulationError> {
    if k < 2 {
        return Err(PopulationError::KTooSmall(k));
    }
    if passes == 0 {
        return Err(PopulationError::NoPasses);
    }
    let label = label_vec(k);
    let features: Vec<ZVector> = (0..k).map(|i| feature_vec(k, i)).collect();
    let mut pred = ZVector::zeros(k);
    let mut steps = Vec::with_capacity(passes * k);
    for pass in 1..=passes {
        for index in 1..=k {
            let x = &features[index - 1];
            let (next, mse) = project(&label, &[x, &pred]);
            pred = next;
            steps.push(PassStep {
                pass,
                index,
                position: (pass - 1) * k + index - 1,
                predictor: pred.clone(),
                mse,
            });
        }
    }
    Ok(PassTrace { k, passes, beyond_theorem_regime: passes > k - 1, steps })
}

/// Support of the end-of-pass predictor; pass 0 is the zero predictor.
pub fn predictor_support(trace: &PassTrace, pass: usize) -> Result<Vec<usize>, PopulationError> {
    if pass == 0 {
        return Ok(vec![]);
    }
    Ok(trace.end_of_pass(pass)?.predictor.support())
}

/// Population MSE of the best linear predictor of the label from the
/// feature suffix `x_{j-1}..x_{k-1}` (1-based `j` in `[2, k]`), computed by
/// projection in the latent basis rather than by any closed form.
pub fn suffix_mse(k: usize, j: usize) -> Result<f64, PopulationError> {
    if k < 2 {
        return Err(PopulationError::KTooSmall(k));
    }
    if j < 2 || j > k {
        return Err(PopulationError::SuffixOutOfRange { j, k });
    }
    let label = label_vec(k);
    let features: Vec<ZVector> = (j - 1..k).map(|i| feature_vec(k, i)).collect();
    let refs: Vec<&ZVector> = features.iter().collect();
    let (_, mse) = project(&label, &refs);
    Ok(mse)
}

/// Terminal MSE at depth `depth` under the most favorable allocation: the
/// node at depth `p` observes `x_{k-p}` (0-based) and receives every
/// earlier prediction. Passing all predictions keeps the depth at `depth`
/// while letting each node span the full feature suffix; a single-parent
/// path is strictly worse (one prediction carries only one latent
/// direction), so this is the true best case the depth barrier limits.
pub fn best_case_depth_bound(k: usize, depth: usize) -> Result<f64, PopulationError> {
    if k < 2 {
        return Err(PopulationError::KTooSmall(k));
    }
    if depth == 0 || depth >= k {
        return Err(PopulationError::DepthOutOfRange { depth, max: k - 1 });
    }
    let label = label_vec(k);
    let mut preds: Vec<ZVector> = Vec::with_capacity(depth);
    let mut mse = label.norm2();
    for p in 1..=depth {
        let x = feature_vec(k, k - p);
        let mut basis: Vec<&ZVector> = vec![&x];
        basis.extend(preds.iter());
        let (next, m) = project(&label, &basis);
        preds.push(next);
        mse = m;
    }
    Ok(mse)
}

/// Exact per-node solution on an arbitrary DAG with an arbitrary feature
/// assignment over the construction's `k` features.
#[derive(Debug, Clone)]
pub struct ExactNode {
    pub predictor: ZVector,
    pub mse: f64,
}

/// Runs the sequential population process on any DAG: each node projects
/// the label onto the span of its local features and its parents' exact
/// predictors.
pub fn exact_dag_solution(
    dag: &Dag,
    assignment: &FeatureAssignment,
    k: usize,
) -> Result<Vec<ExactNode>, PopulationError> {
    if k < 2 {
        return Err(PopulationError::KTooSmall(k));
    }
    if assignment.agent_count() != dag.node_count() {
        return Err(PopulationError::AssignmentMismatch {
            agents: assignment.agent_count(),
            nodes: dag.node_count(),
        });
    }
    if assignment.d() != k {
        return Err(PopulationError::FeatureCountMismatch { d: assignment.d(), k });
    }
    let label = label_vec(k);
    let mut nodes: Vec<Option<ExactNode>> = vec![None; dag.node_count()];
    for &v in dag.topo_order() {
        let mut basis: Vec<ZVector> =
            assignment.set(v).iter().map(|&f| feature_vec(k, f)).collect();
        for &p in dag.parents(v) {
            basis.push(nodes[p].as_ref().expect("topological order").predictor.clone());
        }
        let refs: Vec<&ZVector> = basis.iter().collect();
        let (pred, mse) = project(&label, &refs);
        nodes[v] = Some(ExactNode { predictor: pred, mse });
    }
    Ok(nodes.into_iter().map(|n| n.unwrap()).collect())
}

/// Closed-form one-parameter fits of an error sequence against the decay
/// families `alpha / p` and `beta / sqrt(p)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub beta: f64,
    pub sse_alpha: f64,
    pub sse_beta: f64,
}

impl DecayFit {
    /// Which family fit the data better. Reported, never asserted: the true
    /// decay rate of the process is an open question.
    pub fn better_family(&self) -> &'static str {
        if self.sse_beta <= self.sse_alpha {
            "beta/sqrt(p)"
        } else {
            "alpha/p"
        }
    }
}

pub fn fit_decay_curves(points: &[(f64, f64)]) -> Result<DecayFit, PopulationError> {
    if points.len() < 3 || points.iter().any(|&(p, e)| p < 1.0 || e <= 0.0) {
        return Err(PopulationError::DegenerateFit);
    }
    // least squares for e ~ alpha/p: alpha = sum(e/p) / sum(1/p^2)
    let mut num_a = 0.0;
    let mut den_a = 0.0;
    let mut num_b = 0.0;
    let mut den_b = 0.0;
    for &(p, e) in points {
        num_a += e / p;
        den_a += 1.0 / (p * p);
        num_b += e / p.sqrt();
        den_b += 1.0 / p;
    }
    let alpha = num_a / den_a;
    let beta = num_b / den_b;
    let mut sse_alpha = 0.0;
    let mut sse_beta = 0.0;
    for &(p, e) in points {
        sse_alpha += (e - alpha / p).powi(2);
        sse_beta += (e - beta / p.sqrt()).powi(2);
    }
    Ok(DecayFit { alpha, beta, sse_alpha, sse_beta })
}
