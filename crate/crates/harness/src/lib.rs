//! Monte Carlo benchmark harness for the activity detectors in `cfdetect`:
//! trial generation, detection runs, ROC curves, equal-error sweeps,
//! dataset files and the oracle self-test suites behind the `cfdetect`
//! command-line tool.

// `!(x > 0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod roc;
pub mod selftest;
pub mod sweep;

pub use config::{Algorithm, ExperimentSpec};
pub use error::{HarnessError, Result};
pub use experiment::{run_trials, TrialSet};
pub use roc::{roc_curve, RocCurve};
