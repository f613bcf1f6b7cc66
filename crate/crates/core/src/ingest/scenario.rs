use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{IngestError, IrradianceDataset, IRRADIANCE_MAX, IRRADIANCE_MIN};
use crate::time::TimeGrid;

/// Steps over which a cloud edge ramps between clear and full attenuation.
pub const CLOUD_RAMP_STEPS: usize = 10;

/// One cloud passing over one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudEvent {
    pub sensor: String,
    /// First affected step.
    pub start: usize,
    /// Number of affected steps, ramps included.
    pub duration: usize,
    /// Fractional attenuation at full cover, in `[0, 1]`.
    pub depth: f64,
}

impl CloudEvent {
    /// Attenuation weight in `[0, 1]` at step `t`: linear ramps of
    /// [`CLOUD_RAMP_STEPS`] at both edges, flat in between.
    pub fn weight(&self, t: usize) -> f64 {
        let end = self.start + self.duration;
        if t < self.start || t >= end {
            return 0.0;
        }
        let ramp = CLOUD_RAMP_STEPS as f64;
        let rise = (t - self.start + 1) as f64 / ramp;
        let fall = (end - t) as f64 / ramp;
        rise.min(fall).min(1.0)
    }
}

/// Clear-sky envelope applied on top of the base irradiance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiurnalProfile {
    #[default]
    Flat,
    /// Half-sine between sunrise and sunset (UTC clock hours), zero outside.
    ClearSky { sunrise_hour: f64, sunset_hour: f64 },
}

impl DiurnalProfile {
    pub fn factor(&self, ts: &DateTime<Utc>) -> f64 {
        match *self {
            DiurnalProfile::Flat => 1.0,
            DiurnalProfile::ClearSky { sunrise_hour, sunset_hour } => {
                let h = f64::from(ts.num_seconds_from_midnight()) / 3600.0;
                if h <= sunrise_hour || h >= sunset_hour {
                    0.0
                } else {
                    (PI * (h - sunrise_hour) / (sunset_hour - sunrise_hour)).sin()
                }
            }
        }
    }
}

/// Randomly placed clouds whose footprint covers the `footprint` sensors
/// nearest a random centre, reaching each one `drift_steps` later than the
/// previous (nearest first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomClouds {
    pub count: usize,
    pub footprint: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    #[serde(default)]
    pub drift_steps: usize,
    /// Clouds start no earlier than this step.
    #[serde(default)]
    pub window_start: Option<usize>,
    /// Clouds start before this step.
    #[serde(default)]
    pub window_end: Option<usize>,
}

fn default_step() -> u32 {
    1
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2010, 4, 1, 5, 0, 0).unwrap()
}

/// Declarative description of a synthetic irradiance day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub base_wm2: f64,
    pub n_sensors: usize,
    pub n_steps: usize,
    #[serde(default = "default_step")]
    pub step_secs: u32,
    #[serde(default = "default_start")]
    pub start_time: DateTime<Utc>,
    /// Sensor labels; defaults to `s01`, `s02`, ...
    #[serde(default)]
    pub sensor_ids: Option<Vec<String>>,
    #[serde(default)]
    pub events: Vec<CloudEvent>,
    /// Peak amplitude of uniform white noise, W/m².
    #[serde(default)]
    pub noise_amp: f64,
    #[serde(default)]
    pub profile: DiurnalProfile,
    #[serde(default)]
    pub random_clouds: Option<RandomClouds>,
    /// Sensor layout in metres, keyed by label. Defaults to a 5-wide grid at
    /// 400 m spacing in label order.
    #[serde(default)]
    pub positions: Option<BTreeMap<String, [f64; 2]>>,
}

impl ScenarioSpec {
    /// A flat, event-free scenario.
    pub fn constant(base_wm2: f64, n_sensors: usize, n_steps: usize) -> Self {
        Self {
            base_wm2,
            n_sensors,
            n_steps,
            step_secs: 1,
            start_time: default_start(),
            sensor_ids: None,
            events: Vec::new(),
            noise_amp: 0.0,
            profile: DiurnalProfile::Flat,
            random_clouds: None,
            positions: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, IngestError> {
        toml::from_str(text).map_err(|e| IngestError::Scenario(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn sensor_labels(&self) -> Vec<String> {
        match &self.sensor_ids {
            Some(ids) => ids.clone(),
            None => (1..=self.n_sensors).map(|i| format!("s{i:02}")).collect(),
        }
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.start_time, self.step_secs, self.n_steps)
    }

    fn validate(&self, labels: &[String]) -> Result<(), IngestError> {
        let err = |m: String| Err(IngestError::Scenario(m));
        if self.n_sensors == 0 || labels.len() != self.n_sensors {
            return err(format!("{} sensor ids for n_sensors = {}", labels.len(), self.n_sensors));
        }
        let mut sorted = labels.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return err("duplicate sensor id".into());
        }
        if self.step_secs == 0 {
            return err("step_secs must be positive".into());
        }
        if !(self.base_wm2.is_finite() && self.base_wm2 >= 0.0) {
            return err(format!("base_wm2 {} must be non-negative", self.base_wm2));
        }
        if !(self.noise_amp.is_finite() && self.noise_amp >= 0.0) {
            return err(format!("noise_amp {} must be non-negative", self.noise_amp));
        }
        if let DiurnalProfile::ClearSky { sunrise_hour, sunset_hour } = self.profile {
            if !(sunrise_hour < sunset_hour) {
                return err("sunrise_hour must precede sunset_hour".into());
            }
        }
        for ev in &self.events {
            if !(0.0..=1.0).contains(&ev.depth) {
                return err(format!("event depth {} on {} outside [0, 1]", ev.depth, ev.sensor));
            }
            if !labels.contains(&ev.sensor) {
                return err(format!("event references unknown sensor {}", ev.sensor));
            }
        }
        if let Some(rc) = &self.random_clouds {
            let depths_ok = (0.0..=1.0).contains(&rc.min_depth)
                && (0.0..=1.0).contains(&rc.max_depth)
                && rc.min_depth <= rc.max_depth;
            if !depths_ok {
                return err("random cloud depths must satisfy 0 <= min_depth <= max_depth <= 1".into());
            }
            if rc.min_duration == 0 || rc.min_duration > rc.max_duration {
                return err("random cloud durations must satisfy 0 < min_duration <= max_duration".into());
            }
            if rc.footprint == 0 {
                return err("random cloud footprint must be positive".into());
            }
        }
        if let Some(pos) = &self.positions {
            if let Some(missing) = labels.iter().find(|l| !pos.contains_key(*l)) {
                return err(format!("no position for sensor {missing}"));
            }
        }
        Ok(())
    }

    fn layout(&self, sorted_labels: &[String]) -> BTreeMap<String, [f64; 2]> {
        match &self.positions {
            Some(p) => p.clone(),
            None => sorted_labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), [(i % 5) as f64 * 400.0, (i / 5) as f64 * 400.0]))
                .collect(),
        }
    }

    /// Expands `random_clouds` into concrete events. Depends only on the set of
    /// labels and their positions, never on column order.
    pub fn random_events(&self, seed: u64) -> Vec<CloudEvent> {
        let Some(rc) = &self.random_clouds else { return Vec::new() };
        let mut labels = self.sensor_labels();
        labels.sort();
        let layout = self.layout(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = rc.window_start.unwrap_or(0);
        let hi = rc.window_end.unwrap_or(self.n_steps).max(lo + 1);
        let mut events = Vec::new();
        for _ in 0..rc.count {
            let centre = &labels[rng.random_range(0..labels.len())];
            let start = rng.random_range(lo..hi);
            let duration = rng.random_range(rc.min_duration..=rc.max_duration);
            let depth = if rc.max_depth > rc.min_depth {
                rng.random_range(rc.min_depth..=rc.max_depth)
            } else {
                rc.min_depth
            };
            let c = layout[centre];
            let mut near: Vec<(f64, &String)> = labels
                .iter()
                .map(|l| {
                    let p = layout[l];
                    (((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt(), l)
                })
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
            for (rank, (_, label)) in near.into_iter().take(rc.footprint).enumerate() {
                events.push(CloudEvent {
                    sensor: label.clone(),
                    start: start + rank * rc.drift_steps,
                    duration,
                    depth,
                });
            }
        }
        events
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Generates a deterministic irradiance dataset from `spec` and `seed`.
///
/// Each sensor's value is `base × profile × Π(1 − depth·weight) + noise`,
/// clamped to the plausible range. Noise for a sensor is drawn from a stream
/// keyed by its label, so reordering sensors reorders columns and nothing else.
pub fn synth_cloud_scenario(spec: &ScenarioSpec, seed: u64) -> Result<IrradianceDataset, IngestError> {
    let labels = spec.sensor_labels();
    spec.validate(&labels)?;
    let grid = spec.grid();
    let profile: Vec<f64> = (0..spec.n_steps).map(|t| spec.profile.factor(&grid.timestamp(t))).collect();

    let mut events = spec.events.clone();
    events.extend(spec.random_events(seed));

    let n = labels.len();
    let mut data = vec![0.0; spec.n_steps * n];
    for (s, label) in labels.iter().enumerate() {
        let mine: Vec<&CloudEvent> = events.iter().filter(|e| &e.sensor == label).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label));
        for t in 0..spec.n_steps {
            let mut v = spec.base_wm2 * profile[t];
            for ev in &mine {
                v *= 1.0 - ev.depth * ev.weight(t);
            }
            if spec.noise_amp > 0.0 {
                v += spec.noise_amp * rng.random_range(-1.0..=1.0);
            }
            data[t * n + s] = v.clamp(IRRADIANCE_MIN, IRRADIANCE_MAX);
        }
    }
    IrradianceDataset::new(spec.start_time, spec.step_secs, labels, data)
}
