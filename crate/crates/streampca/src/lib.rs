//! Streaming k-PCA: rank-k multiplicative-update iteration with staged
//! learning rates and warm starts, hard-instance stream generators with
//! exactly known covariance, an offline eigendecomposition oracle, and a
//! seeded, bit-reproducible benchmark harness.
//!
//! Everything downstream of a master seed is deterministic: sources,
//! initializations, trial splits, and CSV output bytes.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod oja;
pub mod oracle;
pub mod rng;
pub mod schedules;
pub mod spectra;

pub use error::{Error, Result};
pub use harness::{
    diagnose, fit_rate, lower_bound_sweep, run_experiment, run_resolved, Algorithm,
    DiagnoseReport, ExperimentConfig, RateFit, Resolved, RunOutput, ScheduleKind, SpectrumKind,
};
pub use metrics::{EigenPartition, MetricEngine, MetricRecord};
pub use oja::SketchState;
pub use schedules::{OjaPPPlan, Schedule, ScheduleConstants};
pub use spectra::{SampleSource, Spectrum, SpectrumRecipe};
