//! Command-line harness: multi-trial experiments, lower-bound traces, the
//! verification suite, coverage audits, and trained-DAG inspection.
//!
//! Exit codes: 0 success, 1 check failure, 2 config error.

use anyhow::Context;
use clap::{Parser, Subcommand};
use daglearn::experiment::{
    run_experiment, run_lowerbound_figure, ExperimentConfig, ExperimentError, GroupKey,
    LowerboundMode,
};
use daglearn::graph::{coverage_window_check, TopologyManifest};
use daglearn::learners::TrainedDag;
use daglearn::verify::{run_suite, Suite};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "daglearn", version, about = "Sequential least-squares learning on DAGs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-trial experiment from a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the cyclic lower-bound error trace and its decay fits.
    RunLowerbound {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        passes: usize,
        /// Train on m samples instead of the exact population oracle.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an invariant suite; exits nonzero if any check fails.
    Verify {
        /// all | identities | lowerbound | bounds | greedy
        #[arg(default_value = "all")]
        suite: String,
        /// Latent dimension for the lower-bound checks.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Optional directory for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit a feature assignment for windowed coverage.
    Coverage {
        /// TopologyManifest JSON (dag + assignment).
        #[arg(long)]
        topology: PathBuf,
        /// Window length to audit.
        #[arg(long)]
        window: usize,
    },
    /// Pretty-print a trained DAG dumped by `run`.
    Inspect {
        /// trained_trial_0.json (or compatible) path.
        #[arg(long)]
        trained: PathBuf,
    },
}

fn main() -> ExitCode {
    // die quietly when stdout is closed mid-pipe (e.g. `daglearn ... | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            // config-shaped problems exit 2, everything else 1
            if e.downcast_ref::<ExperimentError>()
                .is_some_and(|err| matches!(err, ExperimentError::Config { .. }))
            {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, seed, trials, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut config = ExperimentConfig::from_json(&text)?;
            if let Some(seed) = seed {
                config.base_seed = seed;
            }
            if let Some(trials) = trials {
                config.trials = trials;
            }
            if let Some(out) = out {
                config.output_dir = Some(out);
            }
            let out_dir = config.output_dir.clone().ok_or_else(|| {
                ExperimentError::Config {
                    field: "output_dir".into(),
                    message: "set output_dir in the config or pass --out".into(),
                }
            })?;
            config.validate()?;
            let result = run_experiment(&config)?;
            let written = result.write_outputs(&out_dir)?;
            println!(
                "ran {} trials; baseline test mse {}",
                config.trials,
                result
                    .baseline
                    .mean_test_mse
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_else(|| "n/a (exact oracle)".into())
            );
            for row in result.aggregate_rows(GroupKey::Position) {
                println!(
                    "position {:>3}: train {:.6}{}",
                    row.group_value,
                    row.mean_train_mse,
                    row.mean_test_mse
                        .map(|v| format!(", test {v:.6}"))
                        .unwrap_or_default()
                );
            }
            if !result.positions_beating_baseline.is_empty() {
                println!(
                    "positions beating the all-features baseline: {:?}",
                    result.positions_beating_baseline
                );
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::RunLowerbound { k, passes, samples, seed, out } => {
            let mode = match samples {
                Some(m) => LowerboundMode::Empirical { samples: m },
                None => LowerboundMode::Exact,
            };
            let run = run_lowerbound_figure(k, passes, mode, seed)?;
            let written = run.write_outputs(&out)?;
            println!(
                "k={k}, passes={passes}: alpha/p fit alpha={:.4} (sse {:.3e}), beta/sqrt(p) fit beta={:.4} (sse {:.3e}); better fit: {}",
                run.fit.alpha, run.fit.sse_alpha, run.fit.beta, run.fit.sse_beta, run.better_family
            );
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, k, out } => {
            let suite: Suite = suite.parse().map_err(|m: String| anyhow::anyhow!(m))?;
            let summary = run_suite(suite, k);
            print!("{}", summary.render());
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join("verify_report.json");
                std::fs::write(&path, serde_json::to_string_pretty(&summary)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
            Ok(if summary.all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Coverage { topology, window } => {
            let text = std::fs::read_to_string(&topology)
                .with_context(|| format!("reading {}", topology.display()))?;
            let manifest: TopologyManifest = serde_json::from_str(&text)?;
            let assignment = manifest
                .assignment
                .ok_or_else(|| anyhow::anyhow!("topology manifest carries no assignment"))?;
            let path = manifest.dag.longest_path();
            let report = coverage_window_check(&assignment, &path, window)?;
            println!(
                "path of {} agents, window {window}: covered = {}",
                path.len(),
                report.covered
            );
            if let Some(start) = report.first_failing_window {
                println!(
                    "first failing window starts at offset {start}, missing features {:?}",
                    report.missing_features
                );
            }
            Ok(if report.covered { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Inspect { trained } => {
            let text = std::fs::read_to_string(&trained)
                .with_context(|| format!("reading {}", trained.display()))?;
            let trained: TrainedDag = serde_json::from_str(&text)?;
            println!("{} agents, learner {:?}", trained.agents.len(), trained.config);
            for agent in &trained.agents {
                let kind = match &agent.predictor {
                    daglearn::learners::AgentPredictor::Linear(p) => {
                        format!("linear, {} inputs, rank {}", p.inputs.len(), p.effective_rank)
                    }
                    daglearn::learners::AgentPredictor::Span(p) => format!(
                        "greedy, pool {}, {} iterations{}",
                        p.pool.len(),
                        p.iteration_count,
                        if p.hit_iteration_cap { " (hit cap)" } else { "" }
                    ),
                };
                println!(
                    "node {:>3}  features {:?} parents {:?}  train mse {:.6}{}  [{}]",
                    agent.node,
                    agent.local_features,
                    agent.parent_nodes,
                    agent.train_mse,
                    agent
                        .test_mse
                        .map(|v| format!("  test mse {v:.6}"))
                        .unwrap_or_default(),
                    kind
                );
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
