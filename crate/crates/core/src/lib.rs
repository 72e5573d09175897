//! Off-policy evaluation for contextual bandits.
//!
//! The crate covers the classic estimators (DM, IPS, SnIPS, DR and its
//! SWITCH and shrinkage variants), a robust regression reward model that
//! accounts for the shift between logging and target policies, the
//! estimators built on it (DM-R, TR and variants), and a benchmark harness
//! that turns multiclass datasets into logged bandit feedback.
//!
//! ```
//! use ope_core::robust::{conditional_gaussian, BaseGaussian, DensityRatio};
//!
//! // Where the logging policy never acts, the prediction is the prior.
//! let p = conditional_gaussian(2.0, 0.3, &BaseGaussian::default(), DensityRatio::new(0.0, 100.0).unwrap());
//! assert_eq!((p.mean, p.variance), (0.5, 1.0));
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod math;
pub mod policy;
pub mod report;
pub mod reward;
pub mod robust;
pub mod sim;

pub use config::{ExperimentConfig, LoggingMode};
pub use data::{LabeledDataset, LoggedDataset, LoggedRecord};
pub use error::{OpeError, Result};
pub use estimators::{EstimatorKind, EstimatorSpec, EvaluationSet, ModelTable, ModelTables};
pub use experiment::{run_experiment, run_trial, ExperimentFailure, ExperimentReport, TrialResult};
pub use policy::Policy;
pub use report::{emit_report, ReportFormat};
pub use reward::RewardModel;
pub use robust::{train_iid, train_robust, RobustConfig, RobustRegressor};
