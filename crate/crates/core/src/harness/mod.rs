//! Experiment driver: configs, seeded runs, CSV and summary output, and the
//! verification suites.
//!
//! CSV columns are fixed: `seed, error, depth, total, comp_depth, comp_work,
//! eps_total, delta_total, seconds`. Rows are ordered by grid point, then seed.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, Mode, Suite};
pub use run::{log_log_slope, run_experiment, GroupSummary, Row, RunReport, CSV_COLUMNS};
pub use verify::{verify_suite, Check};
