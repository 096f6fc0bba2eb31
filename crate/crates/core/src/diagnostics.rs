//! Structural identities and upper bounds as checkable reports.
//!
//! Each check measures a violation against an explicit threshold and
//! returns a report rather than panicking; the CLI's `verify` subcommand
//! and the acceptance suite both drive these. Bound checks always use
//! train-side MSEs: the inequalities they realize are in-distribution
//! statements, and test-set numbers belong in experiment reports only.

use crate::graph::{coverage_window_check, Dag, FeatureAssignment, GraphError};
use crate::learners::{AgentRecord, InputLabel, Stump, TrainedDag};
use crate::numerics::{self, NumericsError, SecondMomentMatrix};
use crate::oracle::{LinComb, MomentOracle, OracleError, SampleOracle, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("oracle error: {0}")]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("comparator uses feature {feature} that no agent on the subsequence sees")]
    UnsupportedComparator { feature: usize },
    #[error("comparator has an intercept but agents were trained without a constant")]
    UnsupportedIntercept,
    #[error("coverage precondition failed: window starting at path offset {first_failing_window} misses features {missing_features:?}")]
    CoveragePrecondition { first_failing_window: usize, missing_features: Vec<usize> },
    #[error("subsequence [{lo}, {hi}] out of range for path of length {len}")]
    SubsequenceOutOfRange { lo: usize, hi: usize, len: usize },
    #[error("node {0} is not part of the trained DAG")]
    UnknownNode(usize),
    #[error("check needs linear agents but node {0} is a span predictor")]
    NotLinear(usize),
}

/// Outcome of an exact-identity check: `pass` iff the worst violation is
/// within the threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub check: String,
    pub max_violation: f64,
    pub threshold: f64,
    pub pass: bool,
    pub rows: Vec<DetailRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetailRow {
    pub subject: String,
    pub violation: f64,
}

impl IdentityReport {
    fn from_rows(check: impl Into<String>, threshold: f64, rows: Vec<DetailRow>) -> Self {
        let max_violation = rows.iter().map(|r| r.violation).fold(0.0, f64::max);
        Self { check: check.into(), max_violation, threshold, pass: max_violation <= threshold, rows }
    }

    pub fn render(&self) -> String {
        format!(
            "{:<40} max violation {:>12.3e}  threshold {:>9.1e}  {}",
            self.check,
            self.max_violation,
            self.threshold,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

/// Outcome of an inequality check: `pass` iff `slack = rhs - lhs` is not
/// meaningfully negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub params: BTreeMap<String, f64>,
}

impl BoundReport {
    fn new(
        bound: impl Into<String>,
        lhs: f64,
        rhs: f64,
        tolerance: f64,
        params: BTreeMap<String, f64>,
    ) -> Self {
        let slack = rhs - lhs;
        Self { bound: bound.into(), lhs, rhs, slack, pass: slack >= -tolerance, params }
    }

    pub fn render(&self) -> String {
        format!(
            "{:<40} lhs {:>12.6} rhs {:>12.6} slack {:>12.3e}  {}",
            self.bound,
            self.lhs,
            self.rhs,
            self.slack,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

/// Negative slack beyond this fails a bound check. The inequalities hold
/// exactly over the oracle's own moments, so anything past rounding is an
/// implementation bug, not noise.
pub const BOUND_TOLERANCE: f64 = 1e-6;

/// A comparator predictor over the raw feature space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearComparator {
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl LinearComparator {
    pub fn new(beta: Vec<f64>) -> Self {
        Self { beta, intercept: 0.0 }
    }

    pub fn with_intercept(beta: Vec<f64>, intercept: f64) -> Self {
        Self { beta, intercept }
    }

    /// L1 norm of all coefficients, intercept included when present.
    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum::<f64>() + self.intercept.abs()
    }

    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn terms(&self) -> LinComb {
        let mut t: LinComb = self
            .beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(i, &b)| (Var::Feature(i), b))
            .collect();
        if self.intercept != 0.0 {
            t.push((Var::Constant, self.intercept));
        }
        t
    }
}

fn predictor_expr(id: crate::oracle::PredictorId) -> LinComb {
    vec![(Var::Predictor(id), 1.0)]
}

fn residual_of(f: &LinComb) -> LinComb {
    let mut r = f.clone();
    r.push((Var::Label, -1.0));
    r
}

/// `MSE(f) = MSE(g) - 2 E[g (f - y)] + 2 E[f (f - y)] - E[(f - g)^2]`,
/// which holds for any pair of predictors on any distribution. The report
/// carries the absolute residual of the identity.
pub fn check_mse_decomposition<O: MomentOracle>(
    oracle: &O,
    f: &LinComb,
    g: &LinComb,
    subject: impl Into<String>,
) -> Result<IdentityReport, DiagnosticsError> {
    let resid_f = residual_of(f);
    let mse_f = oracle.comb_moment(&resid_f, &resid_f)?;
    let resid_g = residual_of(g);
    let mse_g = oracle.comb_moment(&resid_g, &resid_g)?;
    let cross_g = oracle.comb_moment(g, &resid_f)?;
    let self_f = oracle.comb_moment(f, &resid_f)?;
    let mut diff = f.clone();
    for &(v, c) in g {
        diff.push((v, -c));
    }
    let disagreement = oracle.comb_moment(&diff, &diff)?;
    let violation = (mse_f - (mse_g - 2.0 * cross_g + 2.0 * self_f - disagreement)).abs();
    Ok(IdentityReport::from_rows(
        "mse_decomposition",
        1e-8,
        vec![DetailRow { subject: subject.into(), violation }],
    ))
}

/// Max `|E[g (f - y)]|` over a collection of test functions.
pub fn check_multiaccuracy<O: MomentOracle>(
    oracle: &O,
    predictor: &LinComb,
    tests: &[(String, LinComb)],
    threshold: f64,
) -> Result<IdentityReport, DiagnosticsError> {
    let resid = residual_of(predictor);
    let mut rows = Vec::with_capacity(tests.len());
    for (name, g) in tests {
        let violation = oracle.comb_moment(g, &resid)?.abs();
        rows.push(DetailRow { subject: name.clone(), violation });
    }
    Ok(IdentityReport::from_rows("multiaccuracy", threshold, rows))
}

/// Max `|E[h (f - y)]|` over a stump dictionary, for greedy agents on a
/// sample-backed oracle.
pub fn check_multiaccuracy_stumps(
    sample: &SampleOracle,
    predictor: crate::oracle::PredictorId,
    stumps: &[Stump],
    threshold: f64,
) -> Result<IdentityReport, DiagnosticsError> {
    let fitted = sample.predictor_column(predictor)?;
    let residual: Vec<f64> =
        sample.label_column().iter().zip(fitted).map(|(y, f)| f - y).collect();
    let mut rows = Vec::with_capacity(stumps.len());
    for stump in stumps {
        let col = stump.column(sample.feature_column(stump.feature)?);
        let violation = sample.column_product_mean(&col, &residual).abs();
        rows.push(DetailRow {
            subject: format!("stump(x{} > {:.6})", stump.feature, stump.threshold),
            violation,
        });
    }
    Ok(IdentityReport::from_rows("multiaccuracy_stumps", threshold, rows))
}

/// Input variables of a trained agent, as oracle expressions.
fn agent_inputs(record: &AgentRecord) -> Vec<(String, LinComb)> {
    match &record.predictor {
        crate::learners::AgentPredictor::Linear(p) => p
            .inputs
            .iter()
            .map(|slot| match slot {
                InputLabel::Feature(f) => (format!("x{f}"), vec![(Var::Feature(*f), 1.0)]),
                InputLabel::Parent(pid) => {
                    (format!("parent_pred{pid}"), vec![(Var::Predictor(*pid), 1.0)])
                }
                InputLabel::Constant => ("const".to_string(), vec![(Var::Constant, 1.0)]),
            })
            .collect(),
        crate::learners::AgentPredictor::Span(p) => p
            .pool
            .iter()
            .enumerate()
            .filter_map(|(i, member)| match member {
                crate::learners::PoolMember::Parent { predictor, .. } => Some((
                    format!("pool{i}_parent"),
                    vec![(Var::Predictor(*predictor), 1.0)],
                )),
                crate::learners::PoolMember::Constant => {
                    Some(("const".to_string(), vec![(Var::Constant, 1.0)]))
                }
                // stump pool members are not oracle variables; the stump
                // dictionary check covers them
                crate::learners::PoolMember::Stump(_) => None,
            })
            .collect(),
    }
}

/// Per-agent orthogonality of residuals against every input that is an
/// oracle variable (features, parent predictions, the constant).
pub fn check_input_multiaccuracy<O: MomentOracle>(
    oracle: &O,
    trained: &TrainedDag,
    threshold: f64,
) -> Result<IdentityReport, DiagnosticsError> {
    let mut rows = Vec::new();
    for record in &trained.agents {
        let pred = predictor_expr(record.train_predictor);
        let resid = residual_of(&pred);
        for (name, g) in agent_inputs(record) {
            let violation = oracle.comb_moment(&g, &resid)?.abs();
            rows.push(DetailRow { subject: format!("agent{}:{name}", record.node), violation });
        }
    }
    Ok(IdentityReport::from_rows("input_multiaccuracy", threshold, rows))
}

/// Per-agent `|E[f (f - y)]|`.
pub fn check_self_orthogonality<O: MomentOracle>(
    oracle: &O,
    trained: &TrainedDag,
    threshold: f64,
) -> Result<IdentityReport, DiagnosticsError> {
    let mut rows = Vec::new();
    for record in &trained.agents {
        let pred = predictor_expr(record.train_predictor);
        let resid = residual_of(&pred);
        let violation = oracle.comb_moment(&pred, &resid)?.abs();
        rows.push(DetailRow { subject: format!("agent{}", record.node), violation });
    }
    Ok(IdentityReport::from_rows("self_orthogonality", threshold, rows))
}

/// For every edge (j -> i): `E[(f_i - f_j)^2] = MSE(f_j) - MSE(f_i)`.
pub fn check_edge_closeness<O: MomentOracle>(
    oracle: &O,
    trained: &TrainedDag,
    dag: &Dag,
    threshold: f64,
) -> Result<IdentityReport, DiagnosticsError> {
    let mut rows = Vec::new();
    for (parent, child) in dag.edges() {
        let pr = trained.agent(parent).ok_or(DiagnosticsError::UnknownNode(parent))?;
        let cr = trained.agent(child).ok_or(DiagnosticsError::UnknownNode(child))?;
        let diff: LinComb = vec![
            (Var::Predictor(cr.train_predictor), 1.0),
            (Var::Predictor(pr.train_predictor), -1.0),
        ];
        let gap = oracle.comb_moment(&diff, &diff)?;
        let violation = (gap - (pr.train_mse - cr.train_mse)).abs();
        rows.push(DetailRow { subject: format!("edge {parent}->{child}"), violation });
    }
    Ok(IdentityReport::from_rows("edge_closeness", threshold, rows))
}

/// Train MSE never increases along any edge.
pub fn check_path_monotonicity(
    trained: &TrainedDag,
    dag: &Dag,
    threshold: f64,
) -> Result<IdentityReport, DiagnosticsError> {
    let mut rows = Vec::new();
    for (parent, child) in dag.edges() {
        let pr = trained.agent(parent).ok_or(DiagnosticsError::UnknownNode(parent))?;
        let cr = trained.agent(child).ok_or(DiagnosticsError::UnknownNode(child))?;
        let violation = (cr.train_mse - pr.train_mse).max(0.0);
        rows.push(DetailRow { subject: format!("edge {parent}->{child}"), violation });
    }
    Ok(IdentityReport::from_rows("path_monotonicity", threshold, rows))
}

/// Whether the trained run used a constant input.
fn uses_constant(trained: &TrainedDag) -> bool {
    match trained.config {
        crate::learners::LearnerConfig::Linear { with_constant } => with_constant,
        crate::learners::LearnerConfig::Greedy { with_constant, .. } => with_constant,
    }
}

/// Bound on the final predictor of a path subsequence against any
/// bounded-norm comparator over the features seen on that stretch:
/// `MSE(f_end) <= MSE(g) + 2 A_g M_X sqrt(N_path * eps_path)`.
///
/// Subsequence indices `lo..=hi` are 0-based offsets into `path`. The
/// predecessor of a subsequence starting at the path root is the zero
/// predictor with `MSE = E[y^2]`.
#[allow(clippy::too_many_arguments)]
pub fn check_path_theorem<O: MomentOracle>(
    oracle: &O,
    trained: &TrainedDag,
    assignment: &FeatureAssignment,
    path: &[usize],
    lo: usize,
    hi: usize,
    comparator: &LinearComparator,
) -> Result<BoundReport, DiagnosticsError> {
    if lo > hi || hi >= path.len() {
        return Err(DiagnosticsError::SubsequenceOutOfRange { lo, hi, len: path.len() });
    }
    let mut union: Vec<bool> = vec![false; assignment.d()];
    for &node in &path[lo..=hi] {
        for &f in assignment.set(node) {
            union[f] = true;
        }
    }
    for f in comparator.support() {
        if !union[f] {
            return Err(DiagnosticsError::UnsupportedComparator { feature: f });
        }
    }
    if comparator.intercept != 0.0 && !uses_constant(trained) {
        return Err(DiagnosticsError::UnsupportedIntercept);
    }

    let end = trained.agent(path[hi]).ok_or(DiagnosticsError::UnknownNode(path[hi]))?;
    let lhs = end.train_mse;
    let start_mse = if lo == 0 {
        oracle.moment(Var::Label, Var::Label)?
    } else {
        trained.agent(path[lo - 1]).ok_or(DiagnosticsError::UnknownNode(path[lo - 1]))?.train_mse
    };
    let eps_path = (start_mse - lhs).max(0.0);
    let n_path = (hi - lo + 1) as f64;

    // max feature second moment over the union (plus the constant when the
    // comparator uses one)
    let mut max_second = if comparator.intercept != 0.0 { 1.0f64 } else { 0.0 };
    for (f, seen) in union.iter().enumerate() {
        if *seen {
            max_second = max_second.max(oracle.moment(Var::Feature(f), Var::Feature(f))?);
        }
    }
    let m_x = max_second.sqrt();
    let a_g = comparator.l1_norm();
    let mse_g = oracle.mse_of(&comparator.terms())?;
    let rhs = mse_g + 2.0 * a_g * m_x * (n_path * eps_path).sqrt();

    let mut params = BTreeMap::new();
    params.insert("A_g".into(), a_g);
    params.insert("M_X".into(), m_x);
    params.insert("N_path".into(), n_path);
    params.insert("eps_path".into(), eps_path);
    params.insert("mse_g".into(), mse_g);
    Ok(BoundReport::new("path_theorem", lhs, rhs, BOUND_TOLERANCE, params))
}

/// Depth-and-coverage bound for a whole path: when every window of `m`
/// agents covers all features, the final agent satisfies
/// `MSE <= MSE(g*) + eta` with
/// `eta = 2 A_g M_X sqrt(m) sqrt(2 m MSE_0 / D)`.
///
/// A failed coverage precondition is an error, never a silent pass.
pub fn check_depth_coverage_corollary<O: MomentOracle>(
    oracle: &O,
    trained: &TrainedDag,
    assignment: &FeatureAssignment,
    path: &[usize],
    m: usize,
    comparator: &LinearComparator,
) -> Result<BoundReport, DiagnosticsError> {
    let coverage = coverage_window_check(assignment, path, m)?;
    if !coverage.covered {
        return Err(DiagnosticsError::CoveragePrecondition {
            first_failing_window: coverage.first_failing_window.unwrap_or(0),
            missing_features: coverage.missing_features,
        });
    }
    if comparator.intercept != 0.0 && !uses_constant(trained) {
        return Err(DiagnosticsError::UnsupportedIntercept);
    }
    let d = path.len() as f64;
    let mse0 = oracle.moment(Var::Label, Var::Label)?;
    let mut max_second = if comparator.intercept != 0.0 { 1.0f64 } else { 0.0 };
    for f in 0..assignment.d() {
        max_second = max_second.max(oracle.moment(Var::Feature(f), Var::Feature(f))?);
    }
    let m_x = max_second.sqrt();
    let a_g = comparator.l1_norm();
    let mse_g = oracle.mse_of(&comparator.terms())?;
    let eta = 2.0 * a_g * m_x * (m as f64).sqrt() * (2.0 * m as f64 * mse0 / d).sqrt();
    let last = trained
        .agent(*path.last().expect("non-empty path"))
        .ok_or(DiagnosticsError::UnknownNode(*path.last().unwrap()))?;
    let lhs = last.train_mse;
    let rhs = mse_g + eta;

    let mut params = BTreeMap::new();
    params.insert("A_g".into(), a_g);
    params.insert("M_X".into(), m_x);
    params.insert("M".into(), m as f64);
    params.insert("D".into(), d);
    params.insert("mse_0".into(), mse0);
    params.insert("eta".into(), eta);
    params.insert("mse_g".into(), mse_g);
    Ok(BoundReport::new("depth_coverage_corollary", lhs, rhs, BOUND_TOLERANCE, params))
}

/// Per-agent flattened coefficient norms against the empirical covariance
/// bound `sqrt(2 d) * Y_max / sqrt(lambda_min)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormDiagnostics {
    pub rows: Vec<NormRow>,
    pub lambda_min: f64,
    pub y_max: f64,
    pub bound: f64,
    /// The bound is reported vacuous when the empirical covariance is
    /// singular.
    pub vacuous: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormRow {
    pub node: usize,
    pub l1: f64,
    pub l2: f64,
}

impl NormDiagnostics {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "empirical_norm_diagnostics: lambda_min {:.6e}, Y_max {:.4}, bound {:.4}, {}",
            self.lambda_min,
            self.y_max,
            self.bound,
            if self.vacuous {
                "vacuous"
            } else if self.satisfied {
                "ok"
            } else {
                "FAIL"
            }
        );
        for r in &self.rows {
            let _ = writeln!(out, "  agent {:>3}  |beta|_1 {:>10.4}  |beta|_2 {:>10.4}", r.node, r.l1, r.l2);
        }
        out
    }
}

/// Computes flattened-coefficient norms for every (linear) agent and the
/// bound from the minimum eigenvalue of the empirical feature covariance.
/// Uses the empirical eigenvalue directly rather than a population
/// two-step; the intercept is excluded from the norms, matching a bound
/// stated over feature coefficients.
pub fn empirical_norm_diagnostics(
    sample: &SampleOracle,
    trained: &TrainedDag,
) -> Result<NormDiagnostics, DiagnosticsError> {
    let d = sample.feature_count();
    let mut rows_gram = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let m = sample.moment(Var::Feature(i), Var::Feature(j))?;
            rows_gram[i][j] = m;
            rows_gram[j][i] = m;
        }
    }
    let labels = (0..d).map(|i| format!("x{i}")).collect();
    let gram = SecondMomentMatrix::from_rows(rows_gram, labels)?;
    let lambda_min = numerics::min_eigenvalue(&gram)?;
    let y_max = sample.label_column().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let vacuous = lambda_min <= 0.0;
    let bound = if vacuous { f64::INFINITY } else { (2.0 * d as f64).sqrt() * y_max / lambda_min.sqrt() };

    let mut rows = Vec::new();
    let mut satisfied = true;
    for record in &trained.agents {
        let flat = match record.predictor.as_linear() {
            Some(p) => &p.flat,
            None => return Err(DiagnosticsError::NotLinear(record.node)),
        };
        let l1 = flat.l1_norm();
        let l2 = flat.l2_norm();
        if !vacuous && l1 > bound {
            satisfied = false;
        }
        rows.push(NormRow { node: record.node, l1, l2 });
    }
    Ok(NormDiagnostics { rows, lambda_min, y_max, bound, vacuous, satisfied: satisfied && !vacuous })
}
