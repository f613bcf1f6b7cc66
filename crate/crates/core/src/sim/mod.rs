//! End-to-end runs: configuration, the time-stepping loop, trace files and
//! run comparison.

mod compare;
mod config;
mod run;
mod trace;

use std::path::PathBuf;

use thiserror::Error;

use crate::control::ControlError;
use crate::correlation::CorrelationError;
use crate::dispatch::DispatchError;
use crate::grouping::GroupingError;
use crate::ingest::IngestError;
use crate::metrics::MetricsError;
use crate::pv::PvError;

pub use compare::{compare_runs, Comparison, ComparisonRow};
pub use config::{
    CommitmentMode, CommitmentSection, ControllerKind, ControllerSection, CorrelationSection, IrradianceSection,
    OutputSection, PlantSection, RegulationSection, RunConfig, TrainingSource,
};
pub use run::{
    build_controller, export_correlation, prepare, run_simulation, simulate, Controller, GroupingAdapter,
    HierarchicalAdapter, PreparedRun, RunOutcome, StepPlan, UncontrolledController,
};
pub use trace::{FileSink, MemorySink, NullSink, StepRecord, TraceSink};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("control failure at step {step}: {source}")]
    Convergence {
        step: usize,
        #[source]
        source: ControlError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Data(_) => 3,
            SimError::Convergence { .. } => 4,
            SimError::Io { .. } => 1,
        }
    }

    /// Prefixes the message with where the error arose.
    pub fn context(self, what: &str) -> Self {
        match self {
            SimError::Config(m) => SimError::Config(format!("{what}: {m}")),
            SimError::Data(m) => SimError::Data(format!("{what}: {m}")),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| SimError::Io { path, source }
    }
}

impl From<IngestError> for SimError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { path, source } => SimError::Io { path, source },
            IngestError::Scenario(m) => SimError::Config(format!("scenario: {m}")),
            other => SimError::Data(other.to_string()),
        }
    }
}

impl From<PvError> for SimError {
    fn from(e: PvError) -> Self {
        match e {
            PvError::NegativeIrradiance(_) => SimError::Data(e.to_string()),
            PvError::Config(_) => SimError::Config(e.to_string()),
        }
    }
}

impl From<CorrelationError> for SimError {
    fn from(e: CorrelationError) -> Self {
        match e {
            CorrelationError::Config(_) => SimError::Config(e.to_string()),
            other => SimError::Data(other.to_string()),
        }
    }
}

impl From<DispatchError> for SimError {
    fn from(e: DispatchError) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<GroupingError> for SimError {
    fn from(e: GroupingError) -> Self {
        SimError::Config(e.to_string())
    }
}

impl From<MetricsError> for SimError {
    fn from(e: MetricsError) -> Self {
        SimError::Data(e.to_string())
    }
}

impl From<ControlError> for SimError {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Config(m) => SimError::Config(m),
            other => SimError::Convergence { step: 0, source: other },
        }
    }
}
