use serde::{Deserialize, Serialize};

use super::ControlError;

/// Whether every layer acts on every step, or each on its own cadence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickMode {
    #[default]
    Instant,
    Cadenced,
}

/// Decision periods of the three layers, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayerCadences {
    pub direct_secs: u32,
    pub supervisor_secs: u32,
    pub adaptive_secs: u32,
}

impl Default for LayerCadences {
    fn default() -> Self {
        Self { direct_secs: 1, supervisor_secs: 10, adaptive_secs: 60 }
    }
}

/// Which layers act at one simulation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerTicks {
    pub direct: bool,
    pub supervisor: bool,
    pub adaptive: bool,
}

impl LayerTicks {
    pub const ALL: LayerTicks = LayerTicks { direct: true, supervisor: true, adaptive: true };
}

impl LayerCadences {
    pub fn validate(&self, step_secs: u32) -> Result<(), ControlError> {
        if step_secs == 0 {
            return Err(ControlError::Config("simulation step must be positive".into()));
        }
        for (name, c) in [
            ("direct", self.direct_secs),
            ("supervisor", self.supervisor_secs),
            ("adaptive", self.adaptive_secs),
        ] {
            if c == 0 {
                return Err(ControlError::Config(format!("{name} cadence must be positive")));
            }
            if c % step_secs != 0 {
                return Err(ControlError::Config(format!(
                    "{name} cadence {c} s is not a multiple of the {step_secs} s step"
                )));
            }
        }
        Ok(())
    }

    /// Layers acting at `step`; call [`validate`](Self::validate) first.
    pub fn ticks_at(&self, step: u64, step_secs: u32, mode: TickMode) -> LayerTicks {
        match mode {
            TickMode::Instant => LayerTicks::ALL,
            TickMode::Cadenced => {
                let t = step * u64::from(step_secs);
                LayerTicks {
                    direct: t % u64::from(self.direct_secs) == 0,
                    supervisor: t % u64::from(self.supervisor_secs) == 0,
                    adaptive: t % u64::from(self.adaptive_secs) == 0,
                }
            }
        }
    }
}

/// The acting layers for each of `n_steps` steps.
pub fn tick_scheduler(
    cadences: &LayerCadences,
    mode: TickMode,
    step_secs: u32,
    n_steps: usize,
) -> Result<Vec<LayerTicks>, ControlError> {
    cadences.validate(step_secs)?;
    Ok((0..n_steps as u64).map(|k| cadences.ticks_at(k, step_secs, mode)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(ticks: &[LayerTicks]) -> (usize, usize, usize) {
        (
            ticks.iter().filter(|t| t.direct).count(),
            ticks.iter().filter(|t| t.supervisor).count(),
            ticks.iter().filter(|t| t.adaptive).count(),
        )
    }

    #[test]
    fn instant_mode_runs_everything() {
        let t = tick_scheduler(&LayerCadences::default(), TickMode::Instant, 1, 5).unwrap();
        assert_eq!(counts(&t), (5, 5, 5));
    }

    #[test]
    fn cadenced_mode_divides() {
        let t = tick_scheduler(&LayerCadences::default(), TickMode::Cadenced, 1, 60).unwrap();
        assert_eq!(counts(&t), (60, 6, 1));
    }

    #[test]
    fn bad_cadences_rejected() {
        let zero = LayerCadences { supervisor_secs: 0, ..LayerCadences::default() };
        assert!(tick_scheduler(&zero, TickMode::Cadenced, 1, 10).is_err());
        assert!(tick_scheduler(&LayerCadences::default(), TickMode::Cadenced, 4, 10).is_err());
    }
}
