//! Learning a periodic trajectory from imperfect object detections and
//! using it to filter new detections.
//!
//! The pipeline simulates a detector on a periodic trajectory, estimates the
//! period, aligns and cleans the training detections, fits a Gaussian
//! process from position to phase and keeps only detections that agree with
//! it in space and time. The metrics and experiment modules quantify the
//! gain with precision-recall statistics.

pub mod clustering;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod gp;
pub mod io;
pub mod metrics;
pub mod preprocess;
pub mod seed;
pub mod simulator;
pub mod types;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport};
pub use filter::{build_filter, DetectionFilter, FilterModel};
pub use gp::{GpModel, HyperSearch};
pub use metrics::{average_precision, optimal_f1, PrSeries};
pub use preprocess::{prepare_training_set, CleaningMode};
pub use simulator::{simulate_run, RunRecord, SimulationConfig};
pub use types::{NominalTrajectory, Point2, PrCurveModel, PrLabel, TrajectoryId};
