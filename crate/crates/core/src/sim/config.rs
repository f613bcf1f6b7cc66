use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::control::{ControlConfig, LayerCadences, TickMode, DEFAULT_ALPHA_FLOOR, DEFAULT_MAX_ROUNDS};
use crate::dispatch::Interpolation;
use crate::ingest::{CsvSchema, RegdSynth, ScenarioSpec};
use crate::metrics::DEFAULT_REGD_TOLERANCE_PCT;
use crate::pv::PlantConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    Hierarchical,
    Grouping,
    Uncontrolled,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Hierarchical => "hierarchical",
            ControllerKind::Grouping => "grouping",
            ControllerKind::Uncontrolled => "uncontrolled",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hierarchical" => Ok(Self::Hierarchical),
            "grouping" => Ok(Self::Grouping),
            "uncontrolled" => Ok(Self::Uncontrolled),
            other => Err(SimError::Config(format!("unknown controller `{other}`"))),
        }
    }
}

/// Plant layout, from a separate file or inline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(flatten)]
    pub inline: PlantConfig,
}

/// Irradiance input: exactly one of a CSV file, a scenario file or an inline
/// scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IrradianceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<CsvSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    /// Longest run of missing samples that may be interpolated.
    #[serde(default = "default_max_gap")]
    pub max_gap_secs: u64,
}

fn default_max_gap() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerSection {
    pub kind: ControllerKind,
    pub cluster_sizes: Vec<usize>,
    /// Explicit cluster membership by sensor label; overrides `cluster_sizes`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<String>>>,
    pub alpha_floor: f64,
    pub max_rounds: usize,
    pub tick_mode: TickMode,
    pub cadences: LayerCadences,
    pub headroom_fraction: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Hierarchical,
            cluster_sizes: vec![6, 6, 5],
            clusters: None,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            max_rounds: DEFAULT_MAX_ROUNDS,
            tick_mode: TickMode::Instant,
            cadences: LayerCadences::default(),
            headroom_fraction: 0.2,
        }
    }
}

impl ControllerSection {
    pub fn control_config(&self) -> ControlConfig {
        ControlConfig {
            alpha_floor: self.alpha_floor,
            max_rounds: self.max_rounds,
            tick_mode: self.tick_mode,
            cadences: self.cadences,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingSource {
    /// Hourly matrices from the run's own irradiance.
    #[default]
    SameDay,
    /// Same-hour estimate history from the preceding `window_days`, falling
    /// back to irradiance until that history exists.
    History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationSection {
    pub training: TrainingSource,
    pub window_days: u32,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self { training: TrainingSource::SameDay, window_days: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitmentMode {
    /// Follow the breakpoint schedule.
    #[default]
    Schedule,
    /// Hold `headroom_fraction` of the controller's estimated potential in
    /// reserve; the schedule is ignored.
    Headroom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommitmentSection {
    pub mode: CommitmentMode,
    pub interpolation: Interpolation,
    /// `("HH:MM[:SS]", kW)` pairs in local time.
    pub breakpoints: Vec<(String, f64)>,
}

impl Default for CommitmentSection {
    fn default() -> Self {
        Self { mode: CommitmentMode::Schedule, interpolation: Interpolation::Linear, breakpoints: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulationSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<RegdSynth>,
    #[serde(default = "default_active_start")]
    pub active_start: String,
    #[serde(default = "default_active_end")]
    pub active_end: String,
    /// kW represented by a full-scale signal; defaults to the controller's
    /// headroom fraction of plant rating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_kw: Option<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance_pct: f64,
}

fn default_active_start() -> String {
    "09:00:00".into()
}

fn default_active_end() -> String {
    "17:00:00".into()
}

fn default_tolerance() -> f64 {
    DEFAULT_REGD_TOLERANCE_PCT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub write_messages: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), write_messages: true }
    }
}

/// One simulation run, read from a TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Local clock offset from UTC, for hour buckets, schedules and windows.
    #[serde(default)]
    pub utc_offset_hours: f64,
    #[serde(default)]
    pub plant: PlantSection,
    pub irradiance: IrradianceSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub correlation: CorrelationSection,
    #[serde(default)]
    pub commitment: CommitmentSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regulation: Option<RegulationSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    /// Reads a config and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| match source.kind() {
            std::io::ErrorKind::NotFound => SimError::Config(format!("config file {} not found", path.display())),
            _ => SimError::Io { path: path.into(), source },
        })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| e.context(&path.display().to_string()))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.plant.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.irradiance.file.as_mut() {
            fix(p);
        }
        if let Some(p) = self.irradiance.scenario_file.as_mut() {
            fix(p);
        }
        if let Some(p) = self.regulation.as_mut().and_then(|r| r.path.as_mut()) {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    pub fn utc_offset_secs(&self) -> i32 {
        (self.utc_offset_hours * 3600.0).round() as i32
    }

    /// Checks that do not need any input data.
    pub fn validate(&self) -> Result<(), SimError> {
        let sources = [
            self.irradiance.file.is_some(),
            self.irradiance.scenario_file.is_some(),
            self.irradiance.scenario.is_some(),
        ];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(SimError::Config(
                "irradiance needs exactly one of `file`, `scenario_file` or `scenario`".into(),
            ));
        }
        if !(-14.0..=14.0).contains(&self.utc_offset_hours) {
            return Err(SimError::Config(format!("utc_offset_hours {} out of range", self.utc_offset_hours)));
        }
        let c = &self.controller;
        if !(0.0..1.0).contains(&c.headroom_fraction) {
            return Err(SimError::Config(format!("headroom_fraction {} outside [0, 1)", c.headroom_fraction)));
        }
        c.control_config().validate()?;
        if c.clusters.is_none() && (c.cluster_sizes.is_empty() || c.cluster_sizes.contains(&0)) {
            return Err(SimError::Config("cluster_sizes must be non-empty and positive".into()));
        }
        if self.correlation.window_days == 0 {
            return Err(SimError::Config("correlation window_days must be at least 1".into()));
        }
        if self.commitment.mode == CommitmentMode::Schedule && self.commitment.breakpoints.is_empty() {
            return Err(SimError::Config("commitment schedule needs at least one breakpoint".into()));
        }
        if let Some(r) = &self.regulation {
            if r.path.is_some() == r.synthetic.is_some() {
                return Err(SimError::Config("regulation needs exactly one of `path` or `synthetic`".into()));
            }
            if !(r.tolerance_pct >= 0.0) {
                return Err(SimError::Config("regulation tolerance_pct must be non-negative".into()));
            }
            if let Some(kw) = r.reserve_kw {
                if !(kw >= 0.0) {
                    return Err(SimError::Config("reserve_kw must be non-negative".into()));
                }
            }
        }
        Ok(())
    }

    /// Every file the config refers to must exist.
    pub fn check_files(&self) -> Result<(), SimError> {
        let referenced = [
            ("plant.path", self.plant.path.as_ref()),
            ("irradiance.file", self.irradiance.file.as_ref()),
            ("irradiance.scenario_file", self.irradiance.scenario_file.as_ref()),
            ("regulation.path", self.regulation.as_ref().and_then(|r| r.path.as_ref())),
        ];
        for (key, path) in referenced {
            if let Some(p) = path.filter(|p| !p.is_file()) {
                return Err(SimError::Config(format!("{key}: {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String, SimError> {
        toml::to_string(self).map_err(|e| SimError::Config(e.to_string()))
    }
}
