//! First-order irradiance to AC power model.
//!
//! Output is linear in irradiance, derated, and clipped at the inverter AC
//! limit. This is the simulation's ground truth for each inverter's maximum
//! power potential; controllers never read it directly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::IrradianceDataset;
use crate::series::TimeMatrix;

/// Reference irradiance at which `rated_dc_kw` is specified, W/m².
pub const REFERENCE_IRRADIANCE: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum PvError {
    #[error("irradiance {0} W/m² is negative")]
    NegativeIrradiance(f64),
    #[error("invalid array config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvArrayConfig {
    pub rated_dc_kw: f64,
    pub derate: f64,
    pub inverter_efficiency: f64,
    pub ac_limit_kw: f64,
}

impl Default for PvArrayConfig {
    /// 470 kW array; seventeen of these make an ~8 MW plant.
    fn default() -> Self {
        Self { rated_dc_kw: 470.0, derate: 0.9, inverter_efficiency: 0.96, ac_limit_kw: 470.0 }
    }
}

impl PvArrayConfig {
    pub fn validate(&self) -> Result<(), PvError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(PvError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("rated_dc_kw", self.rated_dc_kw)?;
        positive("derate", self.derate)?;
        positive("inverter_efficiency", self.inverter_efficiency)?;
        positive("ac_limit_kw", self.ac_limit_kw)?;
        if self.derate > 1.0 || self.inverter_efficiency > 1.0 {
            return Err(PvError::Config("derate and inverter_efficiency must not exceed 1".into()));
        }
        Ok(())
    }

    /// AC output at reference irradiance.
    pub fn rated_ac_kw(&self) -> f64 {
        ac_power(REFERENCE_IRRADIANCE, self)
    }
}

fn ac_power(g: f64, cfg: &PvArrayConfig) -> f64 {
    (g / REFERENCE_IRRADIANCE * cfg.rated_dc_kw * cfg.derate * cfg.inverter_efficiency).min(cfg.ac_limit_kw)
}

pub fn irradiance_to_ac_power(g: f64, cfg: &PvArrayConfig) -> Result<f64, PvError> {
    if g < 0.0 || g.is_nan() {
        return Err(PvError::NegativeIrradiance(g));
    }
    Ok(ac_power(g, cfg))
}

/// Per-inverter maximum AC power for every step; column `i` uses `configs[i]`
/// and sensor `i` of the dataset.
pub fn plant_true_mpp(dataset: &IrradianceDataset, configs: &[PvArrayConfig]) -> Result<TimeMatrix, PvError> {
    if configs.len() != dataset.n_sensors() {
        return Err(PvError::Config(format!(
            "{} array configs for {} sensors",
            configs.len(),
            dataset.n_sensors()
        )));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let mut out = TimeMatrix::zeros(dataset.len(), configs.len());
    for t in 0..dataset.len() {
        for ((dst, &g), cfg) in out.row_mut(t).iter_mut().zip(dataset.row(t)).zip(configs) {
            *dst = irradiance_to_ac_power(g, cfg)?;
        }
    }
    Ok(out)
}

/// One inverter in a plant file: the sensor it is driven by, plus optional
/// overrides of the plant-wide array defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverterEntry {
    pub sensor: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rated_dc_kw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverter_efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac_limit_kw: Option<f64>,
}

/// Plant layout: array defaults and the sensor-to-inverter mapping. With no
/// `[[inverter]]` entries, every dataset sensor drives one default inverter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantConfig {
    #[serde(default)]
    pub array: PvArrayConfig,
    #[serde(default, rename = "inverter", skip_serializing_if = "Vec::is_empty")]
    pub inverters: Vec<InverterEntry>,
}

impl PlantConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PvError> {
        toml::from_str(text).map_err(|e| PvError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PvError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PvError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Resolves the inverter list against the available sensors. Returns the
    /// sensor label driving each inverter and its array config, in inverter order.
    pub fn resolve(&self, sensors: &[String]) -> Result<(Vec<String>, Vec<PvArrayConfig>), PvError> {
        if self.inverters.is_empty() {
            self.array.validate()?;
            return Ok((sensors.to_vec(), vec![self.array; sensors.len()]));
        }
        let mut labels = Vec::with_capacity(self.inverters.len());
        let mut configs = Vec::with_capacity(self.inverters.len());
        for entry in &self.inverters {
            if !sensors.contains(&entry.sensor) {
                return Err(PvError::Config(format!("inverter sensor {} not in irradiance data", entry.sensor)));
            }
            if labels.contains(&entry.sensor) {
                return Err(PvError::Config(format!("sensor {} mapped to more than one inverter", entry.sensor)));
            }
            let cfg = PvArrayConfig {
                rated_dc_kw: entry.rated_dc_kw.unwrap_or(self.array.rated_dc_kw),
                derate: entry.derate.unwrap_or(self.array.derate),
                inverter_efficiency: entry.inverter_efficiency.unwrap_or(self.array.inverter_efficiency),
                ac_limit_kw: entry.ac_limit_kw.unwrap_or(self.array.ac_limit_kw),
            };
            cfg.validate()?;
            labels.push(entry.sensor.clone());
            configs.push(cfg);
        }
        Ok((labels, configs))
    }
}

/// Plant nameplate: total AC output at reference irradiance.
pub fn plant_rating_kw(configs: &[PvArrayConfig]) -> f64 {
    configs.iter().map(PvArrayConfig::rated_ac_kw).sum()
}
