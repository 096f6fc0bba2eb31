//! Multi-trial experiment harness.
//!
//! A config names a topology, a dataset, a feature-assignment rule, a
//! learner, and seeds. Each trial derives its own seed (`base_seed + i`)
//! and draws assignment, split, and topology randomness from independent
//! substreams of it, so one factor can vary while the others stay frozen.
//! Trials run on a work pool; results are ordered by trial index and
//! emitted as CSVs plus a JSON manifest, byte-identical across reruns.

use crate::data::{DataError, DatasetManifest, TabularDataset};
use crate::diagnostics::LinearComparator;
use crate::graph::{Dag, FeatureAssignment, GraphError, TreeDirection};
use crate::learners::{
    solve_over_vars, train_dag, LearnerConfig, LearnerError, TrainedDag,
};
use crate::oracle::{sample_from_latent, LatentLinearOracle, LinComb, MomentOracle, Var};
use crate::population::{self, DecayFit, PopulationError};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("trial {trial} (seed {seed}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<LearnerError>,
    },
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error("io error writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TopologySpec {
    Chain { n: usize },
    Tree { n: usize, direction: TreeDirection },
    Hub { spokes: usize },
    /// A chain of `k * passes` agents with the features assigned
    /// cyclically.
    Cyclic { k: usize, passes: usize },
}

impl TopologySpec {
    pub fn node_count(&self) -> usize {
        match self {
            TopologySpec::Chain { n } => *n,
            TopologySpec::Tree { n, .. } => *n,
            TopologySpec::Hub { spokes } => spokes + 1,
            TopologySpec::Cyclic { k, passes } => k * passes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Tabular(DatasetManifest),
    /// Exact latent-Gaussian hard instance with `k` features.
    LowerBound { k: usize },
    /// The two-feature counterexample.
    Intro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Independent inclusion of every (agent, feature) pair.
    Fraction { p: f64 },
    /// Agent `j` sees feature `j mod k`.
    Cyclic { k: usize },
    Explicit { sets: Vec<Vec<usize>>, d: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub dataset: DatasetSpec,
    pub features: FeatureSpec,
    pub learner: LearnerConfig,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub base_seed: u64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_trials() -> usize {
    100
}

fn default_test_fraction() -> f64 {
    0.25
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            ExperimentError::Config { field: "<root>".into(), message: e.to_string() }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |field: &str, message: String| {
            Err(ExperimentError::Config { field: field.into(), message })
        };
        if self.trials == 0 {
            return fail("trials", "must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail("test_fraction", format!("must lie in (0,1), got {}", self.test_fraction));
        }
        match &self.topology {
            TopologySpec::Chain { n } | TopologySpec::Tree { n, .. } if *n == 0 => {
                return fail("topology.n", "must be at least 1".into())
            }
            TopologySpec::Hub { spokes } if *spokes == 0 => {
                return fail("topology.spokes", "must be at least 1".into())
            }
            TopologySpec::Cyclic { k, passes } if *k < 2 || *passes == 0 => {
                return fail("topology", format!("cyclic needs k >= 2 and passes >= 1, got k={k} passes={passes}"))
            }
            _ => {}
        }
        match &self.dataset {
            DatasetSpec::LowerBound { k } if *k < 2 => {
                return fail("dataset.k", "lower-bound construction needs k >= 2".into())
            }
            DatasetSpec::Tabular(DatasetManifest::Csv { path, .. })
                if !Path::new(path).exists() =>
            {
                return fail("dataset.path", format!("file {path} does not exist"))
            }
            _ => {}
        }
        match &self.features {
            FeatureSpec::Fraction { p } if !(*p > 0.0 && *p <= 1.0) => {
                return fail("features.p", format!("must lie in (0,1], got {p}"))
            }
            FeatureSpec::Cyclic { k } if *k == 0 => {
                return fail("features.k", "must be at least 1".into())
            }
            FeatureSpec::Explicit { sets, .. }
                if sets.len() != self.topology.node_count() =>
            {
                return fail(
                    "features.sets",
                    format!(
                        "{} sets for {} nodes",
                        sets.len(),
                        self.topology.node_count()
                    ),
                )
            }
            _ => {}
        }
        if let LearnerConfig::Greedy { delta, .. } = &self.learner {
            if delta.is_nan() || *delta <= 0.0 {
                return fail("learner.delta", format!("must be positive, got {delta}"));
            }
            if matches!(self.dataset, DatasetSpec::LowerBound { .. } | DatasetSpec::Intro) {
                return fail(
                    "learner",
                    "greedy training needs a sample-backed dataset".into(),
                );
            }
        }
        Ok(())
    }
}

/// Independent per-purpose seed derived from one trial seed.
pub fn substream_seed(trial_seed: u64, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(purpose);
    rng.next_u64()
}

const STREAM_ASSIGNMENT: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_TOPOLOGY: u64 = 2;

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Position,
    Depth,
    SubtreeSize,
}

impl GroupKey {
    pub const ALL: [GroupKey; 3] = [GroupKey::Position, GroupKey::Depth, GroupKey::SubtreeSize];

    pub fn name(&self) -> &'static str {
        match self {
            GroupKey::Position => "position",
            GroupKey::Depth => "depth",
            GroupKey::SubtreeSize => "subtree_size",
        }
    }
}

/// One x-axis point of a regrouped experiment curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group_key: String,
    pub group_value: usize,
    pub mean_train_mse: f64,
    pub mean_test_mse: Option<f64>,
    pub test_mse_stderr: Option<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub node: usize,
    pub position: usize,
    pub depth: usize,
    pub subtree_size: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub agents: Vec<AgentOutcome>,
    pub baseline_train_mse: f64,
    pub baseline_test_mse: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub mean_train_mse: f64,
    pub mean_test_mse: Option<f64>,
    pub test_mse_stderr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub dataset_fingerprint: Option<String>,
    pub aggregates: Vec<AggregateRow>,
    pub baseline: BaselineSummary,
    /// Positions whose mean test MSE beat the all-features baseline;
    /// expected empty for linear agents, possible for greedy ones.
    pub positions_beating_baseline: Vec<usize>,
    pub trials: Vec<TrialSummary>,
    #[serde(skip)]
    pub first_trained: Option<TrainedDag>,
    #[serde(skip)]
    pub first_topology: Option<crate::graph::TopologyManifest>,
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

fn build_dag(spec: &TopologySpec, trial_seed: u64) -> Result<Dag, GraphError> {
    match spec {
        TopologySpec::Chain { n } => Dag::chain(*n),
        TopologySpec::Tree { n, direction } => {
            Dag::random_tree(*n, *direction, substream_seed(trial_seed, STREAM_TOPOLOGY))
        }
        TopologySpec::Hub { spokes } => Dag::hub_and_spokes(*spokes),
        TopologySpec::Cyclic { k, passes } => Dag::chain(k * passes),
    }
}

fn build_assignment(
    config: &ExperimentConfig,
    dag: &Dag,
    d: usize,
    trial_seed: u64,
) -> Result<FeatureAssignment, GraphError> {
    match (&config.topology, &config.features) {
        (TopologySpec::Cyclic { k, .. }, FeatureSpec::Cyclic { .. })
        | (TopologySpec::Cyclic { k, .. }, FeatureSpec::Fraction { .. }) => {
            // a cyclic topology pins the assignment
            Ok(FeatureAssignment::cyclic(dag.node_count(), *k))
        }
        (_, FeatureSpec::Fraction { p }) => {
            FeatureAssignment::random(dag, d, *p, substream_seed(trial_seed, STREAM_ASSIGNMENT))
        }
        (_, FeatureSpec::Cyclic { k }) => Ok(FeatureAssignment::cyclic(dag.node_count(), *k)),
        (_, FeatureSpec::Explicit { sets, d }) => FeatureAssignment::new(*d, sets.clone()),
    }
}

/// All-features least-squares baseline; returns (train mse, test mse).
fn baseline_mses<O: MomentOracle, T: MomentOracle>(
    train: &O,
    test: Option<&T>,
    with_constant: bool,
) -> Result<(f64, Option<f64>), LearnerError> {
    let mut vars: Vec<Var> = (0..train.feature_count()).map(Var::Feature).collect();
    if with_constant {
        vars.push(Var::Constant);
    }
    let sol = solve_over_vars(train, &vars)?;
    let terms: LinComb = vars.into_iter().zip(sol.weights.iter().copied()).collect();
    let test_mse = match test {
        Some(t) => Some(t.mse_of(&terms).map_err(LearnerError::Oracle)?),
        None => None,
    };
    Ok((sol.achieved_mse, test_mse))
}

/// The all-features train-side least squares as a comparator for bound
/// checks.
pub fn global_ols_comparator<O: MomentOracle>(
    oracle: &O,
    with_constant: bool,
) -> Result<LinearComparator, LearnerError> {
    let d = oracle.feature_count();
    let mut vars: Vec<Var> = (0..d).map(Var::Feature).collect();
    if with_constant {
        vars.push(Var::Constant);
    }
    let sol = solve_over_vars(oracle, &vars)?;
    let mut beta = vec![0.0; d];
    let mut intercept = 0.0;
    for (var, w) in vars.iter().zip(&sol.weights) {
        match var {
            Var::Feature(f) => beta[*f] = *w,
            Var::Constant => intercept = *w,
            _ => unreachable!(),
        }
    }
    Ok(LinearComparator::with_intercept(beta, intercept))
}

struct TrialRun {
    summary: TrialSummary,
    trained: TrainedDag,
    dag: Dag,
    assignment: FeatureAssignment,
}

fn run_trial(
    config: &ExperimentConfig,
    table: Option<&TabularDataset>,
    trial: usize,
) -> Result<TrialRun, ExperimentError> {
    let seed = config.base_seed + trial as u64;
    let wrap =
        |e: LearnerError| ExperimentError::Trial { trial, seed, source: Box::new(e) };
    let dag = build_dag(&config.topology, seed)?;

    let (trained, assignment, outcomes, baseline_train, baseline_test) = match &config.dataset {
        DatasetSpec::Tabular(_) => {
            let table = table.expect("tabular dataset loaded");
            let (mut train, mut test, _) =
                table.split(config.test_fraction, substream_seed(seed, STREAM_SPLIT))?;
            let d = train.feature_count();
            let assignment = build_assignment(config, &dag, d, seed)?;
            let trained =
                train_dag(&dag, &assignment, &mut train, &config.learner, Some(&mut test))
                    .map_err(wrap)?;
            let with_constant =
                matches!(config.learner, LearnerConfig::Linear { with_constant: true })
                    || matches!(config.learner, LearnerConfig::Greedy { .. });
            let (bt, bte) =
                baseline_mses(&train, Some(&test), with_constant).map_err(wrap)?;
            let outcomes = collect_outcomes(&dag, &trained);
            (trained, assignment, outcomes, bt, bte)
        }
        DatasetSpec::LowerBound { k } => {
            let mut oracle = LatentLinearOracle::lower_bound(*k).map_err(|e| {
                ExperimentError::Config { field: "dataset.k".into(), message: e.to_string() }
            })?;
            let assignment = build_assignment(config, &dag, *k, seed)?;
            let trained = train_dag(
                &dag,
                &assignment,
                &mut oracle,
                &config.learner,
                None::<&mut LatentLinearOracle>,
            )
            .map_err(wrap)?;
            let (bt, bte) =
                baseline_mses(&oracle, None::<&LatentLinearOracle>, false).map_err(wrap)?;
            let outcomes = collect_outcomes(&dag, &trained);
            (trained, assignment, outcomes, bt, bte)
        }
        DatasetSpec::Intro => {
            let mut oracle = LatentLinearOracle::intro_counterexample();
            let assignment = build_assignment(config, &dag, 2, seed)?;
            let trained = train_dag(
                &dag,
                &assignment,
                &mut oracle,
                &config.learner,
                None::<&mut LatentLinearOracle>,
            )
            .map_err(wrap)?;
            let (bt, bte) =
                baseline_mses(&oracle, None::<&LatentLinearOracle>, false).map_err(wrap)?;
            let outcomes = collect_outcomes(&dag, &trained);
            (trained, assignment, outcomes, bt, bte)
        }
    };

    Ok(TrialRun {
        summary: TrialSummary {
            trial,
            seed,
            agents: outcomes,
            baseline_train_mse: baseline_train,
            baseline_test_mse: baseline_test,
        },
        trained,
        dag,
        assignment,
    })
}

fn collect_outcomes(dag: &Dag, trained: &TrainedDag) -> Vec<AgentOutcome> {
    trained
        .agents
        .iter()
        .enumerate()
        .map(|(position, record)| AgentOutcome {
            node: record.node,
            position,
            depth: dag.depth(record.node),
            subtree_size: dag.subtree_size(record.node),
            train_mse: record.train_mse,
            test_mse: record.test_mse,
        })
        .collect()
}

/// Runs every trial on the work pool, aggregates by position, depth, and
/// subtree size, and computes the all-features baseline.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    config.validate()?;
    let table = match &config.dataset {
        DatasetSpec::Tabular(manifest) => Some(manifest.load()?),
        _ => None,
    };
    let runs: Vec<TrialRun> = (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, table.as_ref(), trial))
        .collect::<Result<Vec<_>, _>>()?;

    let seeds: Vec<u64> = runs.iter().map(|r| r.summary.seed).collect();
    let mut aggregates = Vec::new();
    for key in GroupKey::ALL {
        aggregates.extend(aggregate(&runs, key));
    }

    let baseline = {
        let trains: Vec<f64> = runs.iter().map(|r| r.summary.baseline_train_mse).collect();
        let tests: Vec<f64> =
            runs.iter().filter_map(|r| r.summary.baseline_test_mse).collect();
        let (mean_test, stderr_test) = if tests.len() == runs.len() {
            let (m, s) = mean_stderr(&tests);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        BaselineSummary {
            mean_train_mse: trains.iter().sum::<f64>() / trains.len() as f64,
            mean_test_mse: mean_test,
            test_mse_stderr: stderr_test,
        }
    };

    let positions_beating_baseline = match baseline.mean_test_mse {
        Some(base) => aggregates
            .iter()
            .filter(|row| row.group_key == "position")
            .filter(|row| row.mean_test_mse.is_some_and(|m| m < base))
            .map(|row| row.group_value)
            .collect(),
        None => vec![],
    };

    let first_trained = runs.first().map(|r| r.trained.clone());
    let first_topology = runs.first().map(|r| crate::graph::TopologyManifest {
        generator: format!("{:?}", config.topology),
        seed: Some(config.base_seed),
        dag: r.dag.clone(),
        assignment: Some(r.assignment.clone()),
    });
    Ok(ExperimentResult {
        config: config.clone(),
        seeds,
        dataset_fingerprint: table.map(|t| format!("{:016x}", t.fingerprint())),
        aggregates,
        baseline,
        positions_beating_baseline,
        trials: runs.into_iter().map(|r| r.summary).collect(),
        first_trained,
        first_topology,
    })
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups agent outcomes by `key`: within each trial, agents sharing a
/// group value are averaged first; the stderr is over per-trial means.
fn aggregate(runs: &[TrialRun], key: GroupKey) -> Vec<AggregateRow> {
    use std::collections::BTreeMap;
    // group value -> per-trial (train mean, test mean)
    let mut by_value: BTreeMap<usize, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    for run in runs {
        let mut per_trial: BTreeMap<usize, (f64, f64, f64, usize)> = BTreeMap::new();
        for agent in &run.summary.agents {
            let value = match key {
                GroupKey::Position => agent.position,
                GroupKey::Depth => agent.depth,
                GroupKey::SubtreeSize => agent.subtree_size,
            };
            let entry = per_trial.entry(value).or_insert((0.0, 0.0, 0.0, 0));
            entry.0 += agent.train_mse;
            if let Some(t) = agent.test_mse {
                entry.1 += t;
                entry.2 += 1.0;
            }
            entry.3 += 1;
        }
        for (value, (train_sum, test_sum, test_count, count)) in per_trial {
            let test_mean =
                if test_count > 0.0 { Some(test_sum / test_count) } else { None };
            by_value.entry(value).or_default().push((train_sum / count as f64, test_mean));
        }
    }
    by_value
        .into_iter()
        .map(|(value, samples)| {
            let trains: Vec<f64> = samples.iter().map(|s| s.0).collect();
            let tests: Vec<f64> = samples.iter().filter_map(|s| s.1).collect();
            let (mean_test, stderr) = if tests.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_stderr(&tests);
                (Some(m), Some(s))
            };
            AggregateRow {
                group_key: key.name().to_string(),
                group_value: value,
                mean_train_mse: trains.iter().sum::<f64>() / trains.len() as f64,
                mean_test_mse: mean_test,
                test_mse_stderr: stderr,
                trials: samples.len(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Output emission
// ---------------------------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| ExperimentError::Io { path: path.display().to_string(), source: e })?;
    }
    fs::write(path, contents)
        .map_err(|e| ExperimentError::Io { path: path.display().to_string(), source: e })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    /// Writes the aggregate CSVs (one per group key), per-trial CSV, the
    /// reproducibility manifest, and the first trial's trained DAG.
    /// Returns the paths written.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        let mut written = Vec::new();
        for key in GroupKey::ALL {
            let mut csv = String::from(
                "group_key,group_value,mean_train_mse,mean_test_mse,test_mse_stderr,trials\n",
            );
            for row in self.aggregates.iter().filter(|r| r.group_key == key.name()) {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    row.group_key,
                    row.group_value,
                    row.mean_train_mse,
                    opt(row.mean_test_mse),
                    opt(row.test_mse_stderr),
                    row.trials
                );
            }
            let path = dir.join(format!("aggregate_{}.csv", key.name()));
            write_file(&path, &csv)?;
            written.push(path);
        }

        let mut trials_csv = String::from(
            "trial,seed,final_position_train_mse,final_position_test_mse,baseline_train_mse,baseline_test_mse\n",
        );
        for t in &self.trials {
            let last = t.agents.last();
            let _ = writeln!(
                trials_csv,
                "{},{},{},{},{},{}",
                t.trial,
                t.seed,
                last.map(|a| a.train_mse.to_string()).unwrap_or_default(),
                last.and_then(|a| a.test_mse).map(|v| v.to_string()).unwrap_or_default(),
                t.baseline_train_mse,
                opt(t.baseline_test_mse)
            );
        }
        let path = dir.join("trials.csv");
        write_file(&path, &trials_csv)?;
        written.push(path);

        // the destination directory is not part of the experiment identity
        let mut config_echo = self.config.clone();
        config_echo.output_dir = None;
        let manifest = serde_json::json!({
            "config": config_echo,
            "seeds": self.seeds,
            "library_version": env!("CARGO_PKG_VERSION"),
            "dataset_fingerprint": self.dataset_fingerprint,
            "baseline": self.baseline,
            "positions_beating_baseline": self.positions_beating_baseline,
        });
        let path = dir.join("manifest.json");
        write_file(&path, &serde_json::to_string_pretty(&manifest).expect("serializable"))?;
        written.push(path);

        if let Some(trained) = &self.first_trained {
            let path = dir.join("trained_trial_0.json");
            write_file(&path, &trained.to_json())?;
            written.push(path);
        }
        if let Some(topology) = &self.first_topology {
            let path = dir.join("topology_trial_0.json");
            write_file(
                &path,
                &serde_json::to_string_pretty(topology).expect("serializable"),
            )?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn aggregate_rows(&self, key: GroupKey) -> Vec<&AggregateRow> {
        self.aggregates.iter().filter(|r| r.group_key == key.name()).collect()
    }
}

// ---------------------------------------------------------------------------
// Lower-bound figure
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LowerboundMode {
    Exact,
    Empirical { samples: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerboundRow {
    pub pass: usize,
    pub index: usize,
    pub position: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub support_size: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerboundRun {
    pub k: usize,
    pub passes: usize,
    pub mode: LowerboundMode,
    pub seed: u64,
    pub rows: Vec<LowerboundRow>,
    /// Decay fits of end-of-pass train errors; the better family is
    /// reported, never asserted.
    pub fit: DecayFit,
    pub better_family: String,
}

/// Reproduces the error-versus-position trace of the cyclic lower-bound
/// construction, exactly or from samples, plus decay-curve fits.
pub fn run_lowerbound_figure(
    k: usize,
    passes: usize,
    mode: LowerboundMode,
    seed: u64,
) -> Result<LowerboundRun, ExperimentError> {
    let rows = match mode {
        LowerboundMode::Exact => {
            let trace = population::run_cyclic_path(k, passes)?;
            trace
                .steps
                .iter()
                .map(|s| LowerboundRow {
                    pass: s.pass,
                    index: s.index,
                    position: s.position,
                    train_mse: s.mse,
                    test_mse: None,
                    support_size: Some(s.predictor.support().len()),
                })
                .collect::<Vec<_>>()
        }
        LowerboundMode::Empirical { samples } => {
            let latent = LatentLinearOracle::lower_bound(k).map_err(|e| {
                ExperimentError::Config { field: "k".into(), message: e.to_string() }
            })?;
            let mut train = sample_from_latent(&latent, samples, substream_seed(seed, 0));
            let test_m = samples.clamp(1, 100_000);
            let mut test = sample_from_latent(&latent, test_m, substream_seed(seed, 1));
            let n = k * passes;
            let dag = Dag::chain(n)?;
            let assignment = FeatureAssignment::cyclic(n, k);
            let trained = train_dag(
                &dag,
                &assignment,
                &mut train,
                &LearnerConfig::Linear { with_constant: false },
                Some(&mut test),
            )
            .map_err(|e| ExperimentError::Trial { trial: 0, seed, source: Box::new(e) })?;
            trained
                .agents
                .iter()
                .enumerate()
                .map(|(position, record)| LowerboundRow {
                    pass: position / k + 1,
                    index: position % k + 1,
                    position,
                    train_mse: record.train_mse,
                    test_mse: record.test_mse,
                    support_size: None,
                })
                .collect()
        }
    };
    let end_of_pass: Vec<(f64, f64)> = (1..=passes)
        .map(|p| (p as f64, rows[p * k - 1].train_mse))
        .collect();
    let fit = population::fit_decay_curves(&end_of_pass)?;
    let better_family = fit.better_family().to_string();
    Ok(LowerboundRun { k, passes, mode, seed, rows, fit, better_family })
}

impl LowerboundRun {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("pass,index,position,train_mse,test_mse,support_size\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.pass,
                r.index,
                r.position,
                r.train_mse,
                opt(r.test_mse),
                r.support_size.map(|s| s.to_string()).unwrap_or_default()
            );
        }
        out
    }

    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        let trace_path = dir.join("lowerbound_trace.csv");
        write_file(&trace_path, &self.trace_csv())?;
        let fit_path = dir.join("lowerbound_fit.json");
        let fit = serde_json::json!({
            "k": self.k,
            "passes": self.passes,
            "mode": self.mode,
            "seed": self.seed,
            "fit": self.fit,
            "better_family": self.better_family,
        });
        write_file(&fit_path, &serde_json::to_string_pretty(&fit).expect("serializable"))?;
        Ok(vec![trace_path, fit_path])
    }
}
