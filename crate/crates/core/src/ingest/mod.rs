//! Loading, validating and synthesising the time-series inputs.
//!
//! Irradiance is held as a `[timestep x sensor]` matrix on a constant-step
//! grid. Missing samples are represented as `NaN` until [`fill_gaps`] has run;
//! every consumer downstream of ingest expects a complete dataset.

mod gaps;
mod irradiance;
mod regulation;
mod scenario;

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::series::TimeMatrix;
use crate::time::TimeGrid;

pub use gaps::fill_gaps;
pub use irradiance::{parse_irradiance_csv, read_irradiance_csv, write_irradiance_csv, CsvSchema};
pub use regulation::{
    load_regulation_csv, read_regulation_csv, synth_regd_signal, RegdSynth, RegulationSignal, REGD_STEP_SECS,
};
pub use scenario::{synth_cloud_scenario, CloudEvent, DiurnalProfile, RandomClouds, ScenarioSpec, CLOUD_RAMP_STEPS};

/// Physical plausibility bounds for global horizontal irradiance, W/m².
pub const IRRADIANCE_MIN: f64 = 0.0;
pub const IRRADIANCE_MAX: f64 = 1500.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unrecoverable gap in sensor {sensor}: steps {first}..={last} ({secs} s exceeds limit of {max_secs} s)")]
    UnrecoverableGap { sensor: String, first: usize, last: usize, secs: u64, max_secs: u64 },
    #[error("scenario error: {0}")]
    Scenario(String),
}

impl IngestError {
    pub(crate) fn csv(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        IngestError::Parse { line, message: err.to_string() }
    }
}

/// A loaded input plus the number of values clamped into range on the way in.
#[derive(Debug, Clone)]
pub struct Ingested<T> {
    pub data: T,
    pub clamped: usize,
}

/// Per-sensor irradiance on a shared constant-step time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IrradianceDataset {
    pub start_time: DateTime<Utc>,
    pub step_secs: u32,
    pub sensors: Vec<String>,
    values: TimeMatrix,
}

impl IrradianceDataset {
    /// Builds a dataset from row-major values (`NaN` marks a missing sample).
    pub fn new(
        start_time: DateTime<Utc>,
        step_secs: u32,
        sensors: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, IngestError> {
        if sensors.is_empty() {
            return Err(IngestError::Schema("at least one sensor column is required".into()));
        }
        if step_secs == 0 {
            return Err(IngestError::Validation("time step must be positive".into()));
        }
        let cols = sensors.len();
        if values.len() % cols != 0 {
            return Err(IngestError::Validation(format!(
                "{} values do not divide into {} sensor columns",
                values.len(),
                cols
            )));
        }
        let rows = values.len() / cols;
        let values = TimeMatrix::from_rows(rows, cols, values).expect("shape checked");
        Ok(Self { start_time, step_secs, sensors, values })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_sensors(&self) -> usize {
        self.sensors.len()
    }

    pub fn value(&self, step: usize, sensor: usize) -> f64 {
        self.values.get(step, sensor)
    }

    pub fn row(&self, step: usize) -> &[f64] {
        self.values.row(step)
    }

    pub fn column(&self, sensor: usize) -> Vec<f64> {
        self.values.column(sensor)
    }

    pub fn values(&self) -> &TimeMatrix {
        &self.values
    }

    pub fn sensor_index(&self, label: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s == label)
    }

    pub fn timestamp(&self, step: usize) -> DateTime<Utc> {
        self.grid().timestamp(step)
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.start_time, self.step_secs, self.len())
    }

    pub fn missing_count(&self) -> usize {
        self.values.as_slice().iter().filter(|v| v.is_nan()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.missing_count() == 0
    }

    /// Returns a dataset with columns reordered to `labels`.
    pub fn select(&self, labels: &[String]) -> Result<Self, IngestError> {
        let idx = labels
            .iter()
            .map(|l| {
                self.sensor_index(l)
                    .ok_or_else(|| IngestError::Schema(format!("sensor {l} not present in dataset")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut data = Vec::with_capacity(self.len() * idx.len());
        for t in 0..self.len() {
            let row = self.row(t);
            data.extend(idx.iter().map(|&i| row[i]));
        }
        Self::new(self.start_time, self.step_secs, labels.to_vec(), data)
    }

    /// Checks every invariant a complete dataset must satisfy.
    pub fn validate(&self) -> Result<(), IngestError> {
        for t in 0..self.len() {
            for (s, &v) in self.row(t).iter().enumerate() {
                if v.is_nan() {
                    return Err(IngestError::Validation(format!(
                        "missing value for sensor {} at step {t}",
                        self.sensors[s]
                    )));
                }
                if !(IRRADIANCE_MIN..=IRRADIANCE_MAX).contains(&v) {
                    return Err(IngestError::Validation(format!(
                        "irradiance {v} out of range for sensor {} at step {t}",
                        self.sensors[s]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Clamps a reading into the plausible irradiance range. Returns the clamped
/// value and whether clamping happened. `NaN` passes through untouched.
pub(crate) fn clamp_irradiance(v: f64) -> (f64, bool) {
    if v.is_nan() {
        (v, false)
    } else if v < IRRADIANCE_MIN {
        (IRRADIANCE_MIN, true)
    } else if v > IRRADIANCE_MAX {
        (IRRADIANCE_MAX, true)
    } else {
        (v, false)
    }
}
