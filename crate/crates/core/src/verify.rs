//! Canned verification suites behind the CLI `verify` subcommand.
//!
//! Each suite runs a fixed set of configurations through the diagnostics
//! module and reduces every report to one named pass/fail line. The full
//! suite is sized to finish in a couple of minutes.

use crate::data::synthetic_tabular;
use crate::diagnostics::{
    check_depth_coverage_corollary, check_edge_closeness, check_input_multiaccuracy,
    check_mse_decomposition, check_multiaccuracy, check_multiaccuracy_stumps,
    check_path_monotonicity, check_path_theorem, check_self_orthogonality,
    empirical_norm_diagnostics, DiagnosticsError, LinearComparator,
};
use crate::experiment::global_ols_comparator;
use crate::graph::{coverage_window_length, Dag, FeatureAssignment};
use crate::learners::{
    solve_over_vars, stump_dictionary, train_dag, train_greedy_orthogonal_agent, train_linear_agent,
    LearnerConfig, TrainedDag,
};
use crate::numerics;
use crate::oracle::{
    sample_from_latent, LatentLinearOracle, LinComb, MomentOracle, SampleOracle, Var,
};
use crate::population;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

type CheckResult = Result<(bool, String), Box<dyn std::error::Error>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Identities,
    Lowerbound,
    Bounds,
    Greedy,
}

impl std::str::FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Suite::All),
            "identities" => Ok(Suite::Identities),
            "lowerbound" => Ok(Suite::Lowerbound),
            "bounds" => Ok(Suite::Bounds),
            "greedy" => Ok(Suite::Greedy),
            other => Err(format!(
                "unknown suite {other:?} (expected all|identities|lowerbound|bounds|greedy)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifySummary {
    pub suite: Suite,
    pub checks: Vec<CheckLine>,
    pub all_pass: bool,
}

impl VerifySummary {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "[{}] {:<48} {}",
                if c.pass { "ok " } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.iter().filter(|c| c.pass).count(),
            self.checks.len()
        );
        out
    }
}

struct Collector {
    checks: Vec<CheckLine>,
}

impl Collector {
    fn new() -> Self {
        Self { checks: Vec::new() }
    }

    fn run(&mut self, name: &str, check: impl FnOnce() -> CheckResult) {
        let line = match check() {
            Ok((pass, detail)) => CheckLine { name: name.to_string(), pass, detail },
            Err(e) => CheckLine { name: name.to_string(), pass: false, detail: format!("error: {e}") },
        };
        self.checks.push(line);
    }
}

/// Runs a suite and reduces it to pass/fail lines. `k` sizes the
/// lower-bound checks.
pub fn run_suite(suite: Suite, k: usize) -> VerifySummary {
    let mut c = Collector::new();
    match suite {
        Suite::All => {
            lowerbound_checks(&mut c, k);
            identity_checks(&mut c);
            greedy_checks(&mut c);
            bound_checks(&mut c);
        }
        Suite::Lowerbound => lowerbound_checks(&mut c, k),
        Suite::Identities => identity_checks(&mut c),
        Suite::Greedy => greedy_checks(&mut c),
        Suite::Bounds => bound_checks(&mut c),
    }
    let all_pass = c.checks.iter().all(|l| l.pass);
    VerifySummary { suite, checks: c.checks, all_pass }
}

fn lowerbound_checks(c: &mut Collector, k: usize) {
    let k = k.max(3);

    c.run("lowerbound.pass1_mse_is_half", || {
        let trace = population::run_cyclic_path(k, k - 1)?;
        let mse = trace.end_of_pass(1)?.mse;
        Ok(((mse - 0.5).abs() <= 1e-10, format!("k={k}, end-of-pass-1 mse {mse}")))
    });

    c.run("lowerbound.convergence_rate", || {
        let trace = population::run_cyclic_path(k, k - 1)?;
        let mut worst = f64::INFINITY;
        for p in 1..k {
            worst = worst.min(trace.end_of_pass(p)?.mse - 1.0 / (p as f64 + 1.0));
        }
        Ok((worst >= -1e-10, format!("min slack over passes {worst:.3e}")))
    });

    c.run("lowerbound.prefix_stability", || {
        let trace = population::run_cyclic_path(k, k - 1)?;
        let mut worst: f64 = 0.0;
        for p in 1..k {
            let mut prev = if p == 1 {
                population::ZVector::zeros(k)
            } else {
                trace.end_of_pass(p - 1)?.predictor.clone()
            };
            for i in 1..=(k - p) {
                let step = &trace.steps[(p - 1) * k + i - 1];
                let moved = step
                    .predictor
                    .coefficients
                    .iter()
                    .zip(&prev.coefficients)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                worst = worst.max(moved);
                prev = step.predictor.clone();
            }
        }
        Ok((worst <= 1e-10, format!("max prefix move {worst:.3e}")))
    });

    c.run("lowerbound.support_sets", || {
        let trace = population::run_cyclic_path(k, k - 1)?;
        for p in 1..k {
            let expected: Vec<usize> = (k - 1 - p..k).collect();
            let got = population::predictor_support(&trace, p)?;
            if got != expected {
                return Ok((false, format!("pass {p}: support {got:?}, expected {expected:?}")));
            }
        }
        Ok((true, format!("passes 1..{} match the propagation pattern", k - 1)))
    });

    c.run("lowerbound.suffix_formula", || {
        let mut worst: f64 = 0.0;
        for kk in 2..=k {
            for j in 2..=kk {
                let got = population::suffix_mse(kk, j)?;
                let closed = 1.0 / (kk - j + 2) as f64;
                let tri = numerics::tridiag_suffix_mse(kk - j + 1)?;
                worst = worst.max((got - closed).abs()).max((got - tri).abs());
            }
        }
        Ok((worst <= 1e-10, format!("max deviation {worst:.3e} over k <= {k}")))
    });

    c.run("lowerbound.depth_barrier", || {
        let mut worst: f64 = 0.0;
        for d in 1..k {
            let got = population::best_case_depth_bound(k, d)?;
            worst = worst.max((got - 1.0 / (d as f64 + 1.0)).abs());
        }
        Ok((worst <= 1e-10, format!("max |mse - 1/(D+1)| = {worst:.3e}")))
    });

    c.run("lowerbound.closeness_identity", || {
        let trace = population::run_cyclic_path(k, k - 1)?;
        let mut prev_mse = 1.0;
        let mut prev = population::ZVector::zeros(k);
        let mut worst: f64 = 0.0;
        for step in &trace.steps {
            let mut diff = step.predictor.clone();
            for (a, b) in diff.coefficients.iter_mut().zip(&prev.coefficients) {
                *a -= b;
            }
            worst = worst.max(((prev_mse - step.mse) - diff.norm2()).abs());
            prev_mse = step.mse;
            prev = step.predictor.clone();
        }
        Ok((worst <= 1e-10, format!("max violation {worst:.3e}")))
    });
}

fn train_exact_cyclic(
    k: usize,
    passes: usize,
) -> Result<(LatentLinearOracle, TrainedDag, Dag, FeatureAssignment), Box<dyn std::error::Error>> {
    let n = k * passes;
    let dag = Dag::chain(n)?;
    let assignment = FeatureAssignment::cyclic(n, k);
    let mut oracle = LatentLinearOracle::lower_bound(k)?;
    let trained = train_dag(
        &dag,
        &assignment,
        &mut oracle,
        &LearnerConfig::Linear { with_constant: false },
        None::<&mut LatentLinearOracle>,
    )?;
    Ok((oracle, trained, dag, assignment))
}

fn identity_checks(c: &mut Collector) {
    c.run("identities.intro_chain_values", || {
        let dag = Dag::chain(2)?;
        let assignment = FeatureAssignment::new(2, vec![vec![0], vec![1]])?;
        let mut oracle = LatentLinearOracle::intro_counterexample();
        let trained = train_dag(
            &dag,
            &assignment,
            &mut oracle,
            &LearnerConfig::Linear { with_constant: false },
            None::<&mut LatentLinearOracle>,
        )?;
        let a = trained.agents[0].train_mse;
        let b = trained.agents[1].train_mse;
        Ok((
            (a - 1.0).abs() < 1e-12 && (b - 0.5).abs() < 1e-12,
            format!("agent mses [{a}, {b}], expected [1, 0.5]"),
        ))
    });

    c.run("identities.learners_match_population", || {
        let k = 6;
        let passes = 5;
        let (_, trained, _, _) = train_exact_cyclic(k, passes)?;
        let trace = population::run_cyclic_path(k, passes)?;
        let mut worst: f64 = 0.0;
        for (agent, step) in trained.agents.iter().zip(&trace.steps) {
            worst = worst.max((agent.train_mse - step.mse).abs());
        }
        Ok((worst <= 1e-10, format!("max |mse gap| {worst:.3e} over {} agents", k * passes)))
    });

    c.run("identities.exact_structural_suite", || {
        let (oracle, trained, dag, _) = train_exact_cyclic(5, 4)?;
        let tol = oracle.solver_tolerance();
        let ma = check_input_multiaccuracy(&oracle, &trained, tol)?;
        let so = check_self_orthogonality(&oracle, &trained, tol)?;
        let cl = check_edge_closeness(&oracle, &trained, &dag, 1e-8)?;
        let mo = check_path_monotonicity(&trained, &dag, tol)?;
        Ok((
            ma.pass && so.pass && cl.pass && mo.pass,
            format!(
                "multiaccuracy {:.2e}, self-orth {:.2e}, closeness {:.2e}, monotonicity {:.2e}",
                ma.max_violation, so.max_violation, cl.max_violation, mo.max_violation
            ),
        ))
    });

    c.run("identities.sampled_structural_suite", || {
        let latent = LatentLinearOracle::lower_bound(4)?;
        let mut sample = sample_from_latent(&latent, 20_000, 21);
        let dag = Dag::chain(12)?;
        let assignment = FeatureAssignment::cyclic(12, 4);
        let trained = train_dag(
            &dag,
            &assignment,
            &mut sample,
            &LearnerConfig::Linear { with_constant: false },
            None::<&mut SampleOracle>,
        )?;
        let tol = sample.solver_tolerance();
        let ma = check_input_multiaccuracy(&sample, &trained, tol)?;
        let so = check_self_orthogonality(&sample, &trained, tol)?;
        let cl = check_edge_closeness(&sample, &trained, &dag, 1e-8)?;
        Ok((
            ma.pass && so.pass && cl.pass,
            format!(
                "multiaccuracy {:.2e}, self-orth {:.2e}, closeness {:.2e}",
                ma.max_violation, so.max_violation, cl.max_violation
            ),
        ))
    });

    c.run("identities.tabular_structural_suite", || {
        let table = synthetic_tabular(1200, 8, 5);
        let (mut train, mut test, _) = table.split(0.25, 3)?;
        let dag = Dag::chain(16)?;
        let assignment = FeatureAssignment::random(&dag, 8, 0.5, 17)?;
        let trained = train_dag(
            &dag,
            &assignment,
            &mut train,
            &LearnerConfig::Linear { with_constant: true },
            Some(&mut test),
        )?;
        let tol = train.solver_tolerance();
        let ma = check_input_multiaccuracy(&train, &trained, tol)?;
        let so = check_self_orthogonality(&train, &trained, tol)?;
        let cl = check_edge_closeness(&train, &trained, &dag, 1e-8)?;
        let mo = check_path_monotonicity(&trained, &dag, tol)?;
        Ok((
            ma.pass && so.pass && cl.pass && mo.pass,
            format!(
                "multiaccuracy {:.2e}, self-orth {:.2e}, closeness {:.2e}",
                ma.max_violation, so.max_violation, cl.max_violation
            ),
        ))
    });

    c.run("identities.mse_decomposition_random_pairs", || {
        let oracle = LatentLinearOracle::lower_bound(6)?;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst: f64 = 0.0;
        for pair in 0..50 {
            let mut random_comb = || -> LinComb {
                (0..6).map(|f| (Var::Feature(f), rng.random_range(-2.0..2.0))).collect()
            };
            let f = random_comb();
            let g = random_comb();
            let report = check_mse_decomposition(&oracle, &f, &g, format!("pair{pair}"))?;
            worst = worst.max(report.max_violation);
        }
        Ok((worst <= 1e-8, format!("max residual {worst:.3e} over 50 pairs")))
    });

    c.run("identities.deliberate_failure_detected", || {
        let mut oracle = LatentLinearOracle::intro_counterexample();
        let (_, id) = train_linear_agent(&mut oracle, &[0], &[], false)?;
        let pred: LinComb = vec![(Var::Predictor(id), 1.0)];
        let tests = vec![("x1".to_string(), vec![(Var::Feature(1), 1.0)])];
        let report = check_multiaccuracy(&oracle, &pred, &tests, 1e-8)?;
        Ok((
            !report.pass && (report.max_violation - 1.0).abs() < 1e-10,
            format!("violation {} (expected 1)", report.max_violation),
        ))
    });
}

fn greedy_checks(c: &mut Collector) {
    c.run("greedy.single_stump_exact_fit", || {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x > 0.5 { 1.0 } else { -1.0 }).collect();
        let mut sample = SampleOracle::new(vec![xs], ys)?;
        let (p, _) = train_greedy_orthogonal_agent(&mut sample, &[0], &[], 0.05, None, false)?;
        Ok((
            p.iteration_count == 1 && p.train_mse < 1e-10,
            format!("iterations {}, mse {:.3e}", p.iteration_count, p.train_mse),
        ))
    });

    c.run("greedy.termination_guarantees", || {
        let delta = 0.15;
        let mut details = String::new();
        for seed in 0..10u64 {
            let (mut sample, _) = stump_learnable_dataset(600, seed);
            let (p, pid) =
                train_greedy_orthogonal_agent(&mut sample, &[0, 1], &[], delta, None, false)?;
            if p.hit_iteration_cap {
                let _ = write!(details, "seed {seed} hit cap; ");
                continue;
            }
            let e0 = p.mse_trajectory[0];
            if (p.iteration_count as f64) > e0 / (delta * delta) + 1e-9 {
                let _ = write!(details, "seed {seed} iteration bound broken; ");
            }
            for w in p.mse_trajectory.windows(2) {
                if w[0] - w[1] < delta * delta - 1e-9 {
                    let _ = write!(details, "seed {seed} drop {:.3e} < delta^2; ", w[0] - w[1]);
                }
            }
            let dict = stump_dictionary(&sample, &[0, 1]);
            let report = check_multiaccuracy_stumps(&sample, pid, &dict, delta)?;
            if !report.pass {
                let _ = write!(
                    details,
                    "seed {seed} dictionary corr {:.3e} >= delta; ",
                    report.max_violation
                );
            }
        }
        let pass = details.is_empty();
        if pass {
            details = "10 seeds: iteration bound, per-step drop, terminal multiaccuracy".into();
        }
        Ok((pass, details))
    });

    c.run("greedy.immediate_termination", || {
        let (mut sample, _) = stump_learnable_dataset(300, 3);
        let (p, _) = train_greedy_orthogonal_agent(&mut sample, &[0, 1], &[], 1e9, None, false)?;
        Ok((p.iteration_count == 0 && p.pool.is_empty(), format!("iterations {}", p.iteration_count)))
    });
}

/// Two features; the label is an exact small sum of threshold functions of
/// them, so greedy selection can drive the residual to zero.
pub fn stump_learnable_dataset(rows: usize, seed: u64) -> (SampleOracle, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = Vec::with_capacity(rows);
    let mut x1 = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    let cuts0 = [-0.8, 0.1, 0.9];
    let cuts1 = [0.4];
    for _ in 0..rows {
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(-2.0..2.0);
        let mut v = 0.0;
        for t in cuts0 {
            v += if a > t { 0.5 } else { -0.5 };
        }
        for t in cuts1 {
            v += if b > t { 0.7 } else { -0.7 };
        }
        x0.push(a);
        x1.push(b);
        y.push(v);
    }
    let e_y2 = y.iter().map(|v| v * v).sum::<f64>() / rows as f64;
    (SampleOracle::new(vec![x0, x1], y).expect("rows > 0"), e_y2)
}

/// Least squares over an explicit feature subset plus constant, as a
/// window comparator.
fn window_comparator(
    oracle: &SampleOracle,
    union: &[bool],
) -> Result<LinearComparator, Box<dyn std::error::Error>> {
    let mut vars: Vec<Var> = union
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(f, _)| Var::Feature(f))
        .collect();
    vars.push(Var::Constant);
    let sol = solve_over_vars(oracle, &vars)?;
    let mut beta = vec![0.0; union.len()];
    let mut intercept = 0.0;
    for (var, w) in vars.iter().zip(&sol.weights) {
        match var {
            Var::Feature(f) => beta[*f] = *w,
            Var::Constant => intercept = *w,
            _ => {}
        }
    }
    Ok(LinearComparator::with_intercept(beta, intercept))
}

fn bound_checks(c: &mut Collector) {
    c.run("bounds.path_theorem_exact_cyclic", || {
        let k = 6;
        let (oracle, trained, _, assignment) = train_exact_cyclic(k, k - 1)?;
        let n = k * (k - 1);
        let path: Vec<usize> = (0..n).collect();
        let perfect = LinearComparator::new(vec![1.0; k]);
        let mut worst = f64::INFINITY;
        let mut windows = 0usize;
        for lo in 0..n {
            for hi in lo..n {
                if hi - lo + 1 < k {
                    continue;
                }
                let report =
                    check_path_theorem(&oracle, &trained, &assignment, &path, lo, hi, &perfect)?;
                worst = worst.min(report.slack);
                windows += 1;
            }
        }
        Ok((worst >= -1e-6, format!("{windows} windows, min slack {worst:.3e}")))
    });

    c.run("bounds.corollary_exact_cyclic", || {
        let k = 6;
        let (oracle, trained, _, assignment) = train_exact_cyclic(k, k - 1)?;
        let n = k * (k - 1);
        let path: Vec<usize> = (0..n).collect();
        let perfect = LinearComparator::new(vec![1.0; k]);
        let report =
            check_depth_coverage_corollary(&oracle, &trained, &assignment, &path, k, &perfect)?;
        let lower = 1.0 / k as f64;
        Ok((
            report.pass && report.lhs >= lower - 1e-10,
            format!("lhs {:.4} in [{:.4}, {:.4}]", report.lhs, lower, report.rhs),
        ))
    });

    c.run("bounds.tabular_chain_windows", || {
        let table = synthetic_tabular(1500, 9, 11);
        let mut worst = f64::INFINITY;
        let mut windows = 0usize;
        for seed in 0..5u64 {
            let (mut train, _test, _) = table.split(0.25, seed)?;
            let n = 30;
            let dag = Dag::chain(n)?;
            let assignment = FeatureAssignment::random(&dag, 9, 0.5, seed + 100)?;
            let trained = train_dag(
                &dag,
                &assignment,
                &mut train,
                &LearnerConfig::Linear { with_constant: true },
                None::<&mut SampleOracle>,
            )?;
            let path: Vec<usize> = (0..n).collect();
            for m in [5usize, 10, 20] {
                for lo in (0..=n - m).step_by(m) {
                    let hi = lo + m - 1;
                    let mut union = vec![false; 9];
                    for &node in &path[lo..=hi] {
                        for &f in assignment.set(node) {
                            union[f] = true;
                        }
                    }
                    let comparator = window_comparator(&train, &union)?;
                    let report = check_path_theorem(
                        &train, &trained, &assignment, &path, lo, hi, &comparator,
                    )?;
                    worst = worst.min(report.slack);
                    windows += 1;
                }
            }
        }
        Ok((worst >= -1e-6, format!("{windows} windows, min slack {worst:.3e}")))
    });

    c.run("bounds.tabular_corollary_and_norms", || {
        let table = synthetic_tabular(1500, 9, 13);
        let mut evaluated = 0usize;
        let mut coverage_failures = 0usize;
        let mut worst = f64::INFINITY;
        let mut norms_ok = true;
        for seed in 0..5u64 {
            let (mut train, _test, _) = table.split(0.25, seed + 40)?;
            let n = 50;
            let dag = Dag::chain(n)?;
            let assignment = FeatureAssignment::random(&dag, 9, 0.5, seed + 200)?;
            let trained = train_dag(
                &dag,
                &assignment,
                &mut train,
                &LearnerConfig::Linear { with_constant: true },
                None::<&mut SampleOracle>,
            )?;
            let path: Vec<usize> = (0..n).collect();
            let comparator = global_ols_comparator(&train, true)?;
            if let Some(m) = coverage_window_length(n, 9, 0.5, 0.1) {
                match check_depth_coverage_corollary(
                    &train, &trained, &assignment, &path, m, &comparator,
                ) {
                    Ok(report) => {
                        worst = worst.min(report.slack);
                        evaluated += 1;
                    }
                    Err(DiagnosticsError::CoveragePrecondition { .. }) => coverage_failures += 1,
                    Err(e) => return Err(e.into()),
                }
            }
            let norms = empirical_norm_diagnostics(&train, &trained)?;
            if !norms.satisfied {
                norms_ok = false;
            }
        }
        let pass = norms_ok && (evaluated == 0 || worst >= -1e-6);
        Ok((
            pass,
            format!(
                "{evaluated} corollary evaluations (min slack {worst:.3e}), {coverage_failures} coverage failures, norms {}",
                if norms_ok { "ok" } else { "violated" }
            ),
        ))
    });
}
