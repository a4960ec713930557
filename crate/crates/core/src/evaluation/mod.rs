//! Simulation studies, selection and prediction metrics, and
//! cross-validated tuning of the inclusion prior.

pub mod cv;
pub mod metrics;
pub mod replicate;
pub mod simulation;

pub use cv::{stratified_folds, tune_rho, CvConfig, CvPoint, TuneResult};
pub use metrics::{predict_vb, selection_metrics, test_deviance, SelectionMetrics};
pub use replicate::{
    run_replicate, run_scenario, summarize, Method, MethodOutcome, MethodSummary, ReplicateConfig, ReplicateOutcome,
};
pub use simulation::{generate_dataset, SimulationScenario};
