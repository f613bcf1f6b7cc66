//! Desired plant output per step: the commitment schedule plus the regulation
//! signal scaled by the reserve held for it.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RegulationSignal;
use crate::time::{parse_time_of_day, TimeGrid};

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("commitment schedule error: {0}")]
    Schedule(String),
    #[error("regulation alignment error: {0}")]
    Alignment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    StepHold,
    Linear,
}

/// Committed plant output over the day, as `(seconds since local midnight,
/// kW)` breakpoints. Before the first and after the last breakpoint the
/// nearest value holds.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitmentSchedule {
    breakpoints: Vec<(u32, f64)>,
    interpolation: Interpolation,
}

impl CommitmentSchedule {
    pub fn new(breakpoints: Vec<(u32, f64)>, interpolation: Interpolation) -> Result<Self, DispatchError> {
        if breakpoints.is_empty() {
            return Err(DispatchError::Schedule("at least one breakpoint is required".into()));
        }
        for w in breakpoints.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DispatchError::Schedule(format!(
                    "breakpoint times must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, kw)) = breakpoints.iter().find(|(_, kw)| !(kw.is_finite() && *kw >= 0.0)) {
            return Err(DispatchError::Schedule(format!("power {kw} at {t} s must be non-negative")));
        }
        Ok(Self { breakpoints, interpolation })
    }

    /// Parses `("HH:MM[:SS]", kW)` breakpoints.
    pub fn from_clock(points: &[(String, f64)], interpolation: Interpolation) -> Result<Self, DispatchError> {
        let parsed = points
            .iter()
            .map(|(t, kw)| {
                parse_time_of_day(t)
                    .map(|s| (s, *kw))
                    .ok_or_else(|| DispatchError::Schedule(format!("invalid time of day `{t}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(parsed, interpolation)
    }

    /// A schedule committing `kw` all day.
    pub fn flat(kw: f64) -> Result<Self, DispatchError> {
        Self::new(vec![(0, kw)], Interpolation::StepHold)
    }

    pub fn breakpoints(&self) -> &[(u32, f64)] {
        &self.breakpoints
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn value_at(&self, secs_of_day: u32) -> f64 {
        let bp = &self.breakpoints;
        let k = bp.partition_point(|&(t, _)| t <= secs_of_day);
        if k == 0 {
            return bp[0].1;
        }
        if k == bp.len() {
            return bp[k - 1].1;
        }
        let (t0, p0) = bp[k - 1];
        let (t1, p1) = bp[k];
        match self.interpolation {
            Interpolation::StepHold => p0,
            Interpolation::Linear => p0 + (p1 - p0) * f64::from(secs_of_day - t0) / f64::from(t1 - t0),
        }
    }
}

pub fn desired_output(commitment_kw: f64, regd: f64, reserve_kw: f64) -> f64 {
    (commitment_kw + regd * reserve_kw).max(0.0)
}

/// Regulation values aligned to a simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegulationWindow {
    pub values: Vec<f64>,
    /// Index of the signal sample governing each step, for steps inside the
    /// active window that the signal covers.
    pub intervals: Vec<Option<usize>>,
}

impl RegulationWindow {
    pub fn inactive(len: usize) -> Self {
        Self { values: vec![0.0; len], intervals: vec![None; len] }
    }
}

/// Aligns `signal` to `grid` by sample-and-hold, zero outside the local-time
/// window `[active.0, active.1)` seconds of day. A signal without its own
/// start time begins at the first active step.
pub fn regulation_window(
    signal: &RegulationSignal,
    grid: &TimeGrid,
    active: (u32, u32),
) -> Result<RegulationWindow, DispatchError> {
    let (sim, sig) = (grid.step_secs, signal.step_secs);
    if sim == 0 || sig == 0 || (sig % sim != 0 && sim % sig != 0) {
        return Err(DispatchError::Alignment(format!(
            "signal step {sig} s and simulation step {sim} s do not divide each other"
        )));
    }
    let is_active = |t: usize| {
        let s = grid.local_secs_of_day(t);
        s >= active.0 && s < active.1
    };
    let mut out = RegulationWindow::inactive(grid.len);
    if signal.is_empty() {
        return Ok(out);
    }
    let origin: DateTime<Utc> = match signal.start {
        Some(start) => start,
        None => match (0..grid.len).find(|&t| is_active(t)) {
            Some(t) => grid.timestamp(t),
            None => return Ok(out),
        },
    };
    for t in 0..grid.len {
        if !is_active(t) {
            continue;
        }
        let elapsed = (grid.timestamp(t) - origin).num_seconds();
        if elapsed < 0 {
            continue;
        }
        let idx = (elapsed / i64::from(sig)) as usize;
        if let Some(&v) = signal.values.get(idx) {
            out.values[t] = v;
            out.intervals[t] = Some(idx);
        }
    }
    Ok(out)
}

/// Everything the adaptive layer is asked to deliver at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSignal {
    pub timestamp: DateTime<Utc>,
    pub commitment_kw: f64,
    pub regd_value: f64,
    pub reserve_kw: f64,
    pub p_desired: f64,
    pub regd_interval: Option<usize>,
}

pub fn build_dispatch(
    grid: &TimeGrid,
    schedule: &CommitmentSchedule,
    regulation: &RegulationWindow,
    reserve_kw: f64,
) -> Vec<DispatchSignal> {
    (0..grid.len)
        .map(|t| {
            let commitment_kw = schedule.value_at(grid.local_secs_of_day(t));
            let regd_value = regulation.values[t];
            DispatchSignal {
                timestamp: grid.timestamp(t),
                commitment_kw,
                regd_value,
                reserve_kw,
                p_desired: desired_output(commitment_kw, regd_value, reserve_kw),
                regd_interval: regulation.intervals[t],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn desired_output_examples() {
        assert_eq!(desired_output(5000.0, 0.5, 1000.0), 5500.0);
        assert_eq!(desired_output(5000.0, 0.0, 1000.0), 5000.0);
        assert_eq!(desired_output(500.0, -1.0, 1000.0), 0.0);
    }

    #[test]
    fn schedule_interpolation() {
        let pts = vec![(3600, 100.0), (7200, 300.0)];
        let hold = CommitmentSchedule::new(pts.clone(), Interpolation::StepHold).unwrap();
        let lin = CommitmentSchedule::new(pts, Interpolation::Linear).unwrap();
        assert_eq!(hold.value_at(0), 100.0);
        assert_eq!(hold.value_at(5400), 100.0);
        assert_eq!(lin.value_at(5400), 200.0);
        assert_eq!(lin.value_at(9000), 300.0);
        assert!(CommitmentSchedule::new(vec![(10, 1.0), (10, 2.0)], Interpolation::Linear).is_err());
        assert!(CommitmentSchedule::new(vec![(10, -1.0)], Interpolation::Linear).is_err());
    }

    #[test]
    fn clock_breakpoints() {
        let s = CommitmentSchedule::from_clock(&[("09:00".into(), 5.0), ("17:00:00".into(), 0.0)], Interpolation::StepHold)
            .unwrap();
        assert_eq!(s.breakpoints(), &[(32_400, 5.0), (61_200, 0.0)]);
        assert!(CommitmentSchedule::from_clock(&[("nine".into(), 5.0)], Interpolation::StepHold).is_err());
    }

    fn grid_at(h: u32, m: u32, s: u32, len: usize) -> TimeGrid {
        TimeGrid::new(Utc.with_ymd_and_hms(2010, 4, 1, h, m, s).unwrap(), 1, len)
    }

    #[test]
    fn sample_and_hold() {
        let sig = RegulationSignal::new(2, vec![0.5, -0.5]);
        let w = regulation_window(&sig, &grid_at(10, 0, 0, 4), (9 * 3600, 17 * 3600)).unwrap();
        assert_eq!(w.values, vec![0.5, 0.5, -0.5, -0.5]);
        assert_eq!(w.intervals, vec![Some(0), Some(0), Some(1), Some(1)]);
    }

    #[test]
    fn outside_window_is_zero() {
        let sig = RegulationSignal::new(2, vec![1.0; 100]);
        let w = regulation_window(&sig, &grid_at(8, 59, 58, 4), (9 * 3600, 17 * 3600)).unwrap();
        assert_eq!(w.values, vec![0.0, 0.0, 1.0, 1.0]);
        let empty = regulation_window(&RegulationSignal::new(2, vec![]), &grid_at(10, 0, 0, 3), (0, 86_400)).unwrap();
        assert_eq!(empty.values, vec![0.0; 3]);
    }

    #[test]
    fn misaligned_steps_rejected() {
        let sig = RegulationSignal::new(3, vec![0.1]);
        let mut grid = grid_at(10, 0, 0, 3);
        grid.step_secs = 2;
        assert!(regulation_window(&sig, &grid, (0, 86_400)).is_err());
    }

    #[test]
    fn dispatch_equals_commitment_outside_window() {
        let grid = grid_at(8, 59, 59, 3);
        let sched = CommitmentSchedule::flat(5000.0).unwrap();
        let reg = regulation_window(&RegulationSignal::new(2, vec![0.4; 10]), &grid, (9 * 3600, 17 * 3600)).unwrap();
        let d = build_dispatch(&grid, &sched, &reg, 1000.0);
        assert_eq!(d[0].p_desired, 5000.0);
        assert_eq!(d[1].p_desired, 5400.0);
    }
}
