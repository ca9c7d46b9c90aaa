//! JSON-configured estimator composition, cached parallel experiment
//! execution, benchmark metrics, and report emission.

pub mod config;
pub mod metrics;
pub mod report;
pub mod runner;
pub mod spec;

pub use config::{
    load_experiment, validate_experiment, EstimatorRef, Experiment, ExperimentConfig,
    MethodKey, MmsInfo, ReporterType,
};
pub use metrics::{pearson, rate_of_inconsistency};
pub use report::report;
pub use runner::{
    run_estimator, run_experiment, EstimatorMetrics, EstimatorRun, ExperimentResult,
    SubjectResult, NOSE_TIP_ID,
};
pub use spec::{
    parse_estimator, CorrectionStage, DistanceStage, EstimatorOptions, EstimatorSpec,
    IcpOptions, RigidStage, WarpStage,
};
