//! Sequential least-squares learning on DAGs.
//!
//! Agents sit on the nodes of a directed acyclic graph. Each one sees a
//! subset of the global feature set plus the predictions of its parents,
//! fits an unregularized least-squares model over those inputs (or runs
//! greedy orthogonal regression over a base hypothesis class), and passes
//! its prediction downstream. The crate provides:
//!
//! - [`numerics`]: minimum-norm least squares over second moments and
//!   eigenvalue diagnostics.
//! - [`graph`]: chain / tree / hub topologies, feature assignments,
//!   coverage audits.
//! - [`oracle`] and [`data`]: second-moment oracles, exact latent-Gaussian
//!   constructions, finite-sample oracles, CSV ingestion.
//! - [`learners`]: linear and greedy-orthogonal agents, sequential DAG
//!   training.
//! - [`population`]: an exact symbolic engine for the hard Gaussian
//!   instance, used to verify convergence-rate and depth lower bounds
//!   without sampling error.
//! - [`diagnostics`]: every structural identity and upper bound as a
//!   checkable report.
//! - [`experiment`]: multi-trial experiment harness, trace emission, and
//!   the `verify` suite behind the CLI.
//!
//! The two-feature counterexample end to end: agent 0 sees a feature that
//! is pure noise on its own, so agent 1 is stuck at MSE 1/2 even though
//! the two features jointly predict the label perfectly.
//!
//! ```
//! use daglearn::graph::{Dag, FeatureAssignment};
//! use daglearn::learners::{train_dag, LearnerConfig};
//! use daglearn::oracle::LatentLinearOracle;
//!
//! let dag = Dag::chain(2)?;
//! let assignment = FeatureAssignment::new(2, vec![vec![0], vec![1]])?;
//! let mut oracle = LatentLinearOracle::intro_counterexample();
//! let trained = train_dag(
//!     &dag,
//!     &assignment,
//!     &mut oracle,
//!     &LearnerConfig::Linear { with_constant: false },
//!     None::<&mut LatentLinearOracle>,
//! )?;
//! assert!((trained.agents[0].train_mse - 1.0).abs() < 1e-12);
//! assert!((trained.agents[1].train_mse - 0.5).abs() < 1e-12);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// index loops mirror the matrix algebra they implement
#![allow(clippy::needless_range_loop)]

pub mod data;
pub mod diagnostics;
pub mod experiment;
pub mod graph;
pub mod learners;
pub mod numerics;
pub mod oracle;
pub mod population;
pub mod verify;

/// Orthogonality tolerance for exact (population) oracles: violations above
/// this indicate an algebraic bug, not noise.
pub const TOL_EXACT: f64 = 1e-8;

/// Orthogonality tolerance for finite-sample oracles, where accumulated
/// rounding over large sums is expected.
pub const TOL_SAMPLE: f64 = 1e-6;
