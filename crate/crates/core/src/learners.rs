//! The agents.
//!
//! A linear agent solves unregularized least squares over its local
//! features, its parents' predictions, and optionally a constant. A greedy
//! orthogonal agent grows a pool from a stump dictionary: at each round it
//! adds the stump most correlated with the current residual and re-solves
//! the full least-squares problem over the pool, stopping once the best
//! correlation falls below a threshold. Both register their prediction
//! with the oracle so children can use it as an input.
//!
//! Training a DAG walks the topological order; a test oracle, when
//! supplied, receives a parallel registration of every predictor (same
//! weights, no refit) so out-of-sample error is available per agent.

use crate::graph::{Dag, FeatureAssignment};
use crate::numerics::{self, NumericsError, SecondMomentMatrix};
use crate::oracle::{MomentOracle, OracleError, PredictorId, SampleOracle, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("unknown parent predictor {0}")]
    UnknownParent(PredictorId),
    #[error("greedy training needs a sample-backed oracle")]
    OracleNotSampleBacked,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("oracle error: {0}")]
    Oracle(OracleError),
    #[error("assignment has {agents} agents for a DAG of {nodes} nodes")]
    AssignmentMismatch { agents: usize, nodes: usize },
    #[error("training agent {node} failed: {source}")]
    AgentFailed {
        node: usize,
        #[source]
        source: Box<LearnerError>,
    },
}

impl From<OracleError> for LearnerError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::UnknownPredictor(id) => LearnerError::UnknownParent(id),
            other => LearnerError::Oracle(other),
        }
    }
}

/// One input slot of a linear agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputLabel {
    Feature(usize),
    /// Prediction of a parent, identified by its registered predictor id
    /// on the training oracle.
    Parent(PredictorId),
    Constant,
}

/// A trained predictor flattened onto the full feature space:
/// `f(x) = beta . x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatCoeffs {
    pub beta: Vec<f64>,
    pub intercept: f64,
}

impl FlatCoeffs {
    pub fn zeros(d: usize) -> Self {
        Self { beta: vec![0.0; d], intercept: 0.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn l1_norm(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub inputs: Vec<InputLabel>,
    pub weights: Vec<f64>,
    /// Substituting parents recursively yields one coefficient vector over
    /// the raw features; predictions through `flat` and through the inputs
    /// agree pointwise.
    pub flat: FlatCoeffs,
    pub train_mse: f64,
    pub effective_rank: usize,
}

/// A depth-1 threshold function with outputs `{-scale, +scale}`, scaled so
/// its empirical second moment is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub scale: f64,
}

impl Stump {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x > self.threshold {
            self.scale
        } else {
            -self.scale
        }
    }

    pub fn column(&self, feature_column: &[f64]) -> Vec<f64> {
        feature_column.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Member of a greedy agent's feature pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PoolMember {
    /// Parent node id and its registered predictor.
    Parent { node: usize, predictor: PredictorId },
    /// Constant-one input; sign stumps cannot span an intercept on their
    /// own, so targets with nonzero mean need this in the pool.
    Constant,
    Stump(Stump),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanPredictor {
    pub pool: Vec<PoolMember>,
    pub coefficients: Vec<f64>,
    /// Number of stumps added before termination.
    pub iteration_count: usize,
    /// The run stopped at the iteration cap instead of the correlation
    /// threshold; flagged, not fatal.
    pub hit_iteration_cap: bool,
    /// MSE after the initial projection and after each added stump.
    pub mse_trajectory: Vec<f64>,
    pub train_mse: f64,
}

/// Learner choice for a whole DAG run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LearnerConfig {
    Linear {
        with_constant: bool,
    },
    Greedy {
        delta: f64,
        /// Overrides the default cap `ceil(E0 / delta^2) + 1`.
        max_iterations: Option<usize>,
        /// Seed the pool with a constant input. On by default: greedy
        /// training runs on tabular data, whose targets have nonzero mean.
        #[serde(default = "default_greedy_constant")]
        with_constant: bool,
    },
}

fn default_greedy_constant() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AgentPredictor {
    Linear(LinearPredictor),
    Span(SpanPredictor),
}

impl AgentPredictor {
    pub fn as_linear(&self) -> Option<&LinearPredictor> {
        match self {
            AgentPredictor::Linear(p) => Some(p),
            AgentPredictor::Span(_) => None,
        }
    }

    pub fn as_span(&self) -> Option<&SpanPredictor> {
        match self {
            AgentPredictor::Span(p) => Some(p),
            AgentPredictor::Linear(_) => None,
        }
    }
}

/// One trained agent inside a [`TrainedDag`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRecord {
    pub node: usize,
    pub local_features: Vec<usize>,
    pub parent_nodes: Vec<usize>,
    pub predictor: AgentPredictor,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub train_predictor: PredictorId,
    pub test_predictor: Option<PredictorId>,
}

/// A full sequential training run, agents in topological order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedDag {
    pub config: LearnerConfig,
    pub agents: Vec<AgentRecord>,
}

impl TrainedDag {
    pub fn agent(&self, node: usize) -> Option<&AgentRecord> {
        self.agents.iter().find(|a| a.node == node)
    }

    pub fn train_predictor_of(&self, node: usize) -> Option<PredictorId> {
        self.agent(node).map(|a| a.train_predictor)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

/// Minimum-norm least squares of the label on `local_features`, parent
/// predictions, and optionally a constant. The fitted predictor is
/// registered with the oracle; flattened coefficients come from the
/// parents' flattened forms.
pub fn train_linear_agent<O: MomentOracle>(
    oracle: &mut O,
    local_features: &[usize],
    parents: &[(PredictorId, &FlatCoeffs)],
    with_constant: bool,
) -> Result<(LinearPredictor, PredictorId), LearnerError> {
    let d = oracle.feature_count();
    let mut inputs: Vec<InputLabel> = Vec::new();
    let mut vars: Vec<Var> = Vec::new();
    for &f in local_features {
        inputs.push(InputLabel::Feature(f));
        vars.push(Var::Feature(f));
    }
    for &(pid, _) in parents {
        inputs.push(InputLabel::Parent(pid));
        vars.push(Var::Predictor(pid));
    }
    if with_constant {
        inputs.push(InputLabel::Constant);
        vars.push(Var::Constant);
    }
    let solution = solve_over_vars(oracle, &vars)?;
    // flatten: beta = own weights scattered over [d] + sum of v_p * beta_p
    let mut flat = FlatCoeffs::zeros(d);
    for (slot, w) in vars.iter().zip(&solution.weights) {
        match *slot {
            Var::Feature(f) => flat.beta[f] += w,
            Var::Constant => flat.intercept += w,
            Var::Predictor(pid) => {
                let parent_flat = parents
                    .iter()
                    .find(|(id, _)| *id == pid)
                    .map(|(_, fc)| *fc)
                    .expect("var built from parents");
                for (acc, b) in flat.beta.iter_mut().zip(&parent_flat.beta) {
                    *acc += w * b;
                }
                flat.intercept += w * parent_flat.intercept;
            }
            Var::Label => unreachable!("label is never an input"),
        }
    }
    let terms: Vec<(Var, f64)> = vars.iter().copied().zip(solution.weights.iter().copied()).collect();
    let id = oracle.register_combination(&terms)?;
    let predictor = LinearPredictor {
        inputs,
        weights: solution.weights,
        flat,
        train_mse: solution.achieved_mse,
        effective_rank: solution.effective_rank,
    };
    Ok((predictor, id))
}

/// Assembles the Gram/cross system of the label on a set of tracked
/// variables and solves it; the building block behind both the agents and
/// the comparator fits in bound checks.
pub fn solve_over_vars<O: MomentOracle>(
    oracle: &O,
    vars: &[Var],
) -> Result<numerics::LeastSquaresSolution, LearnerError> {
    let n = vars.len();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let m = oracle.moment(vars[i], vars[j])?;
            rows[i][j] = m;
            rows[j][i] = m;
        }
    }
    let labels = vars
        .iter()
        .map(|v| match v {
            Var::Feature(f) => format!("x{f}"),
            Var::Predictor(p) => format!("pred{p}"),
            Var::Constant => "const".to_string(),
            Var::Label => "y".to_string(),
        })
        .collect();
    let gram = SecondMomentMatrix::from_rows(rows, labels)?;
    let mut cross = Vec::with_capacity(n);
    for v in vars {
        cross.push(oracle.moment(*v, Var::Label)?);
    }
    let target = oracle.moment(Var::Label, Var::Label)?;
    Ok(numerics::solve_least_squares(&gram, &cross, target)?)
}

/// All candidate stumps over the given features: thresholds at midpoints
/// between consecutive distinct sample values, at most 256 quantile-spaced
/// per feature, each normalized to unit empirical second moment. Constant
/// features contribute nothing.
pub fn stump_dictionary(sample: &SampleOracle, features: &[usize]) -> Vec<Stump> {
    let mut dict = Vec::new();
    for &f in features {
        let col = match sample.feature_column(f) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let mut sorted: Vec<f64> = col.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < 2 {
            continue;
        }
        let midpoints: Vec<f64> =
            sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let chosen: Vec<f64> = if midpoints.len() <= 256 {
            midpoints
        } else {
            let last = midpoints.len() - 1;
            let mut picked: Vec<f64> =
                (0..256).map(|i| midpoints[i * last / 255]).collect();
            picked.dedup();
            picked
        };
        for threshold in chosen {
            // sign outputs have unit second moment already; computing the
            // scale keeps the normalization explicit
            let raw_second_moment = 1.0;
            let scale = 1.0 / f64::sqrt(raw_second_moment);
            dict.push(Stump { feature: f, threshold, scale });
        }
    }
    dict
}

struct GreedyPool {
    columns: Vec<Vec<f64>>,
    members: Vec<PoolMember>,
}

impl GreedyPool {
    fn solve(&self, sample: &SampleOracle) -> Result<(Vec<f64>, f64, Vec<f64>), LearnerError> {
        let n = self.columns.len();
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let m = sample.column_product_mean(&self.columns[i], &self.columns[j]);
                rows[i][j] = m;
                rows[j][i] = m;
            }
        }
        let labels = (0..n).map(|i| format!("pool{i}")).collect();
        let gram = SecondMomentMatrix::from_rows(rows, labels)?;
        let label_col = sample.label_column();
        let cross: Vec<f64> =
            self.columns.iter().map(|c| sample.column_product_mean(c, label_col)).collect();
        let target = sample.column_product_mean(label_col, label_col);
        let solution = numerics::solve_least_squares(&gram, &cross, target)?;
        let m = sample.sample_size();
        let mut fitted = vec![0.0f64; m];
        for (col, &w) in self.columns.iter().zip(&solution.weights) {
            if w == 0.0 {
                continue;
            }
            for (acc, v) in fitted.iter_mut().zip(col) {
                *acc += w * v;
            }
        }
        Ok((solution.weights, solution.achieved_mse, fitted))
    }
}

/// Greedy orthogonal regression for one agent over a stump dictionary.
///
/// The pool starts as the parents' predictions. Each round finds the stump
/// with the largest absolute empirical correlation against the current
/// residual (ties broken by ascending feature id, then threshold); if that
/// correlation is below `delta` the agent keeps its current projection,
/// otherwise the stump joins the pool and the least-squares solution is
/// recomputed from scratch.
pub fn train_greedy_orthogonal_agent(
    sample: &mut SampleOracle,
    local_features: &[usize],
    parents: &[(usize, PredictorId)],
    delta: f64,
    max_iterations: Option<usize>,
    with_constant: bool,
) -> Result<(SpanPredictor, PredictorId), LearnerError> {
    assert!(delta > 0.0, "delta must be positive");
    let m = sample.sample_size();
    let mut pool = GreedyPool { columns: Vec::new(), members: Vec::new() };
    if with_constant {
        pool.columns.push(vec![1.0; m]);
        pool.members.push(PoolMember::Constant);
    }
    for &(node, pid) in parents {
        pool.columns.push(sample.predictor_column(pid)?.to_vec());
        pool.members.push(PoolMember::Parent { node, predictor: pid });
    }
    let dictionary = stump_dictionary(sample, local_features);
    // per-feature sort order, reused to score every threshold in O(m)
    let mut feature_order: Vec<(usize, Vec<usize>)> = Vec::new();
    for &f in local_features {
        if let Ok(col) = sample.feature_column(f) {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            feature_order.push((f, order));
        }
    }

    let (mut coefficients, mut mse, mut fitted) = pool.solve(sample)?;
    let initial_mse = mse;
    let cap = max_iterations
        .unwrap_or_else(|| (initial_mse / (delta * delta)).ceil() as usize + 1);
    let mut trajectory = vec![mse];
    let mut iterations = 0usize;
    let mut hit_cap = false;

    loop {
        // best |E[h R]| over the dictionary, scanned in lexicographic order
        let label_col = sample.label_column();
        let residual: Vec<f64> =
            label_col.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let residual_total: f64 = crate::oracle::neumaier_sum(residual.iter().copied());
        let mut best: Option<(f64, Stump)> = None;
        for (f, order) in &feature_order {
            let col = sample.feature_column(*f).expect("validated above");
            // suffix sums of the residual in ascending feature order
            let mut above = residual_total;
            let mut idx = 0usize;
            for stump in dictionary.iter().filter(|s| s.feature == *f) {
                while idx < m && col[order[idx]] <= stump.threshold {
                    above -= residual[order[idx]];
                    idx += 1;
                }
                // E[h R] = scale * (sum_above - sum_below) / m
                let corr = stump.scale * (2.0 * above - residual_total) / m as f64;
                if best.as_ref().is_none_or(|(b, _)| corr.abs() > *b) {
                    best = Some((corr.abs(), stump.clone()));
                }
            }
        }
        let (best_corr, best_stump) = match best {
            Some(b) => b,
            None => break, // empty dictionary
        };
        if best_corr < delta {
            break;
        }
        if iterations >= cap {
            hit_cap = true;
            break;
        }
        let col = best_stump.column(sample.feature_column(best_stump.feature)?);
        pool.columns.push(col);
        pool.members.push(PoolMember::Stump(best_stump));
        iterations += 1;
        let (c, e, f) = pool.solve(sample)?;
        coefficients = c;
        mse = e;
        fitted = f;
        trajectory.push(mse);
    }

    let members = pool.members;
    let id = sample.register_column(fitted)?;
    let predictor = SpanPredictor {
        pool: members,
        coefficients,
        iteration_count: iterations,
        hit_iteration_cap: hit_cap,
        mse_trajectory: trajectory,
        train_mse: mse,
    };
    Ok((predictor, id))
}

/// Trains every agent of the DAG in topological order. Each agent's inputs
/// are its assigned features plus its parents' already-trained predictors.
/// When a test oracle is supplied, every predictor is re-registered there
/// with its trained weights and its out-of-sample MSE recorded.
pub fn train_dag<O: MomentOracle, T: MomentOracle>(
    dag: &Dag,
    assignment: &FeatureAssignment,
    train_oracle: &mut O,
    config: &LearnerConfig,
    mut test_oracle: Option<&mut T>,
) -> Result<TrainedDag, LearnerError> {
    if assignment.agent_count() != dag.node_count() {
        return Err(LearnerError::AssignmentMismatch {
            agents: assignment.agent_count(),
            nodes: dag.node_count(),
        });
    }
    let n = dag.node_count();
    let mut train_ids: Vec<Option<PredictorId>> = vec![None; n];
    let mut test_ids: Vec<Option<PredictorId>> = vec![None; n];
    let mut flats: Vec<Option<FlatCoeffs>> = vec![None; n];
    let mut agents = Vec::with_capacity(n);

    for &node in dag.topo_order() {
        let parent_nodes: Vec<usize> = dag.parents(node).to_vec();
        let features = assignment.set(node);
        let wrap = |e: LearnerError| LearnerError::AgentFailed { node, source: Box::new(e) };

        let record = match config {
            LearnerConfig::Linear { with_constant } => {
                let parents: Vec<(PredictorId, &FlatCoeffs)> = parent_nodes
                    .iter()
                    .map(|&p| {
                        (
                            train_ids[p].expect("topological order"),
                            flats[p].as_ref().expect("topological order"),
                        )
                    })
                    .collect();
                let (predictor, train_id) =
                    train_linear_agent(train_oracle, features, &parents, *with_constant)
                        .map_err(wrap)?;
                let (test_id, test_mse) = match test_oracle.as_deref_mut() {
                    Some(test) => {
                        let mut terms: Vec<(Var, f64)> = Vec::new();
                        for (slot, w) in predictor.inputs.iter().zip(&predictor.weights) {
                            let var = match slot {
                                InputLabel::Feature(f) => Var::Feature(*f),
                                InputLabel::Constant => Var::Constant,
                                InputLabel::Parent(pid) => {
                                    // map the train-side parent to its test twin
                                    let parent_node = parent_nodes
                                        .iter()
                                        .copied()
                                        .find(|&p| train_ids[p] == Some(*pid))
                                        .expect("parent registered");
                                    Var::Predictor(
                                        test_ids[parent_node].expect("test twin registered"),
                                    )
                                }
                            };
                            terms.push((var, *w));
                        }
                        let id = test.register_combination(&terms).map_err(|e| wrap(e.into()))?;
                        let mse =
                            test.mse_of(&[(Var::Predictor(id), 1.0)]).map_err(|e| wrap(e.into()))?;
                        (Some(id), Some(mse))
                    }
                    None => (None, None),
                };
                flats[node] = Some(predictor.flat.clone());
                train_ids[node] = Some(train_id);
                test_ids[node] = test_id;
                AgentRecord {
                    node,
                    local_features: features.to_vec(),
                    parent_nodes,
                    train_mse: predictor.train_mse,
                    test_mse,
                    train_predictor: train_id,
                    test_predictor: test_id,
                    predictor: AgentPredictor::Linear(predictor),
                }
            }
            LearnerConfig::Greedy { delta, max_iterations, with_constant } => {
                let sample =
                    train_oracle.as_sample_mut().ok_or(LearnerError::OracleNotSampleBacked)?;
                let parents: Vec<(usize, PredictorId)> = parent_nodes
                    .iter()
                    .map(|&p| (p, train_ids[p].expect("topological order")))
                    .collect();
                let (predictor, train_id) = train_greedy_orthogonal_agent(
                    sample,
                    features,
                    &parents,
                    *delta,
                    *max_iterations,
                    *with_constant,
                )
                .map_err(wrap)?;
                let (test_id, test_mse) = match test_oracle.as_deref_mut() {
                    Some(test) => {
                        let test_sample =
                            test.as_sample_mut().ok_or(LearnerError::OracleNotSampleBacked)?;
                        let rows = test_sample.sample_size();
                        let mut col = vec![0.0f64; rows];
                        for (member, &w) in predictor.pool.iter().zip(&predictor.coefficients) {
                            if w == 0.0 {
                                continue;
                            }
                            match member {
                                PoolMember::Parent { node: p, .. } => {
                                    let parent_col = test_sample
                                        .predictor_column(test_ids[*p].expect("test twin"))
                                        .map_err(|e| wrap(e.into()))?;
                                    for (acc, v) in col.iter_mut().zip(parent_col) {
                                        *acc += w * v;
                                    }
                                }
                                PoolMember::Constant => {
                                    for acc in col.iter_mut() {
                                        *acc += w;
                                    }
                                }
                                PoolMember::Stump(s) => {
                                    let feat = test_sample
                                        .feature_column(s.feature)
                                        .map_err(|e| wrap(e.into()))?;
                                    for (acc, &x) in col.iter_mut().zip(feat) {
                                        *acc += w * s.eval(x);
                                    }
                                }
                            }
                        }
                        let id = test_sample.register_column(col).map_err(|e| wrap(e.into()))?;
                        let mse = test_sample
                            .mse_of(&[(Var::Predictor(id), 1.0)])
                            .map_err(|e| wrap(e.into()))?;
                        (Some(id), Some(mse))
                    }
                    None => (None, None),
                };
                train_ids[node] = Some(train_id);
                test_ids[node] = test_id;
                AgentRecord {
                    node,
                    local_features: features.to_vec(),
                    parent_nodes,
                    train_mse: predictor.train_mse,
                    test_mse,
                    train_predictor: train_id,
                    test_predictor: test_id,
                    predictor: AgentPredictor::Span(predictor),
                }
            }
        };
        agents.push(record);
    }
    Ok(TrainedDag { config: config.clone(), agents })
}
