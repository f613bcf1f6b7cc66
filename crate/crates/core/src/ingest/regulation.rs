use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::irradiance::parse_timestamp;
use super::{Ingested, IngestError};

/// Default update period of a fast regulation signal.
pub const REGD_STEP_SECS: u32 = 2;

/// Normalized regulation setpoints in `[-1, 1]` on a constant step.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationSignal {
    pub step_secs: u32,
    /// Time of the first value, when the source carried timestamps.
    pub start: Option<DateTime<Utc>>,
    pub values: Vec<f64>,
}

impl RegulationSignal {
    pub fn new(step_secs: u32, values: Vec<f64>) -> Self {
        Self { step_secs, start: None, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn load_regulation_csv(path: impl AsRef<Path>) -> Result<Ingested<RegulationSignal>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.into(), source })?;
    read_regulation_csv(file)
}

/// Reads either a single `value` column (header optional, 2 s step) or a
/// `timestamp,value` table whose step is taken from the timestamps.
pub fn read_regulation_csv<R: Read>(reader: R) -> Result<Ingested<RegulationSignal>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(IngestError::csv)?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push(rec);
    }
    let Some(first) = records.first() else {
        return Err(IngestError::Validation("regulation file is empty".into()));
    };
    let width = first.len();
    if width == 0 || width > 2 {
        return Err(IngestError::Schema(format!("expected 1 or 2 columns, found {width}")));
    }
    let has_header = first.get(width - 1).is_some_and(|v| v.parse::<f64>().is_err());
    let body = &records[usize::from(has_header)..];
    if body.is_empty() {
        return Err(IngestError::Validation("regulation file has no values".into()));
    }

    let mut values = Vec::with_capacity(body.len());
    let mut stamps = Vec::new();
    let mut clamped = 0;
    for rec in body {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(IngestError::Parse { line, message: format!("expected {width} fields, found {}", rec.len()) });
        }
        let text = &rec[width - 1];
        let v: f64 = text
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| IngestError::Parse { line, message: format!("invalid value `{text}`") })?;
        if !(-1.0..=1.0).contains(&v) {
            clamped += 1;
        }
        values.push(v.clamp(-1.0, 1.0));
        if width == 2 {
            let ts = parse_timestamp(&rec[0])
                .ok_or_else(|| IngestError::Parse { line, message: format!("unparseable timestamp `{}`", &rec[0]) })?;
            stamps.push((line, ts));
        }
    }

    let mut signal = RegulationSignal::new(REGD_STEP_SECS, values);
    if let Some(&(_, start)) = stamps.first() {
        signal.start = Some(start);
        if let Some(&(_, second)) = stamps.get(1) {
            let step = (second - start).num_seconds();
            if step <= 0 {
                return Err(IngestError::Validation("regulation timestamps must increase".into()));
            }
            for pair in stamps.windows(2) {
                if (pair[1].1 - pair[0].1).num_seconds() != step {
                    return Err(IngestError::Validation(format!(
                        "regulation step is not constant at line {}",
                        pair[1].0
                    )));
                }
            }
            signal.step_secs = step as u32;
        }
    }
    Ok(Ingested { data: signal, clamped })
}

/// Parameters of a synthetic fast regulation signal: a clamped first-order
/// autoregressive walk `x' = persistence·x + volatility·u`, `u ~ U(-1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegdSynth {
    pub duration_secs: u32,
    #[serde(default = "default_regd_step")]
    pub step_secs: u32,
    #[serde(default = "default_persistence")]
    pub persistence: f64,
    #[serde(default = "default_volatility")]
    pub volatility: f64,
}

fn default_regd_step() -> u32 {
    REGD_STEP_SECS
}

fn default_persistence() -> f64 {
    0.98
}

fn default_volatility() -> f64 {
    0.1
}

impl RegdSynth {
    pub fn hours(hours: u32) -> Self {
        Self {
            duration_secs: hours * 3600,
            step_secs: REGD_STEP_SECS,
            persistence: default_persistence(),
            volatility: default_volatility(),
        }
    }
}

pub fn synth_regd_signal(params: &RegdSynth, seed: u64) -> Result<RegulationSignal, IngestError> {
    if params.step_secs == 0 {
        return Err(IngestError::Scenario("regulation step must be positive".into()));
    }
    if !(0.0..=1.0).contains(&params.persistence) || !(params.volatility >= 0.0) {
        return Err(IngestError::Scenario("persistence must lie in [0, 1] and volatility be non-negative".into()));
    }
    let n = params.duration_secs.div_ceil(params.step_secs) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: f64 = 0.0;
    let values = (0..n)
        .map(|_| {
            x = (params.persistence * x + params.volatility * rng.random_range(-1.0..=1.0)).clamp(-1.0, 1.0);
            x
        })
        .collect();
    Ok(RegulationSignal::new(params.step_secs, values))
}
