//! Experiment orchestration: configs, training runs, grid search, the
//! variance probe, the verification suite and report files.

pub mod config;
pub mod data;
pub mod grid;
pub mod report;
pub mod train;
pub mod variance;
pub mod verify;

pub use config::{AttributeMode, BetaChoice, RunConfig, VarianceConfig};
pub use data::{load_splits, Context, Splits};
pub use grid::{run_grid_search, CellStatus, GridCell, GridReport};
pub use report::{emit_report, RunReport, SCHEMA_VERSION};
pub use train::{run_training, train_extrapolated, TrainOutcome, TrainParams, Trainer};
pub use variance::{run_variance_probe, VarianceReport};
pub use verify::{run_verification_suite, VerificationReport};
