//! Gaussian-smoothing gradient estimation (ReSQue), ball acceleration, and the
//! parallel and differentially private convex solvers built on top of them.
//!
//! The crate is organised bottom-up:
//!
//! - [`problem_core`]: objectives, datasets, gradient oracles and the query ledger
//!   used to measure parallel depth and work.
//! - [`resque`]: density-ratio reweighted gradient estimates of the Gaussian
//!   convolution of an objective, plus exact moment formulas.
//! - [`ballaccel`]: the outer accelerated loop driven by ball oracles.
//! - [`parallel_solvers`]: pre-batched ball oracles (epoch SGD and AC-SA) and the
//!   end-to-end low-depth solver.
//! - [`privacy`]: an approximate Rényi-DP ledger and its accounting formulas.
//! - [`dp_solvers`]: subsampled private solvers, the bias-reduced proximal
//!   estimator, aggregation and the DP-ERM / DP-SCO drivers.
//! - [`harness`]: configuration, experiment runner and verification suites behind
//!   the `resque-opt` binary.
//!
//! With the default `parallel` feature, batched oracle evaluation, replicas and
//! seeds run on rayon. Without it every loop runs sequentially. Results are
//! identical either way because all randomness comes from per-index substreams.

pub mod ballaccel;
pub mod dp_solvers;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod par;
pub mod parallel_solvers;
pub mod privacy;
pub mod problem_core;
pub mod resque;
pub mod rng;
pub mod testing;

pub use error::{Error, Result};
