//! Seeded Monte Carlo experiments: trial orchestration, figure sweeps and output.

pub mod config;
pub mod estimate;
pub mod exec;
pub mod experiment;
pub mod output;

pub use config::{
    builtin_config_text, Curve, DetectorKind, EdThresholdRule, ExperimentConfig, ExperimentId, GainPolicy, PowerSpec,
    Sweep,
};
pub use estimate::{estimate_pd_pfa, DetectionEstimate, EnergyDetector, OperatingPoint, Statistic};
pub use exec::Execution;
pub use experiment::{policy_gains, run_experiment, ExperimentResult, ResultRow};
pub use output::{Manifest, CSV_HEADER};
