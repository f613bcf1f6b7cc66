//! Evaluation metrics over completed run traces.
//!
//! Support is the signed gap `p_desired - output` that other generation would
//! have to fill. Energies are in kWh for a constant step of `step_secs`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::DispatchSignal;

/// Share of regulation intervals a resource must follow to stay qualified.
pub const PJM_COMPLIANCE_PCT: f64 = 75.0;
/// Default band, in percent of the request, within which an interval counts
/// as followed.
pub const DEFAULT_REGD_TOLERANCE_PCT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("metric undefined: {0}")]
    Undefined(String),
}

/// Signed support requirement per step.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSeries {
    pub values: Vec<f64>,
    pub step_secs: u32,
}

impl SupportSeries {
    pub fn from_dispatch(dispatch: &[DispatchSignal], output: &[f64], step_secs: u32) -> Result<Self, MetricsError> {
        if dispatch.len() != output.len() {
            return Err(MetricsError::LengthMismatch(dispatch.len(), output.len()));
        }
        let values = dispatch.iter().zip(output).map(|(d, o)| d.p_desired - o).collect();
        Ok(Self { values, step_secs })
    }

    fn step_hours(&self) -> f64 {
        f64::from(self.step_secs) / 3600.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mileage {
    pub mean_kw: f64,
    pub max_kw: f64,
    pub total_kw: f64,
}

/// Absolute step-to-step change of support: mean, max and sum. A series
/// shorter than two steps has no changes and reports zeros.
pub fn mileage(support: &SupportSeries) -> Mileage {
    let v = &support.values;
    if v.len() < 2 {
        return Mileage { mean_kw: 0.0, max_kw: 0.0, total_kw: 0.0 };
    }
    let (total, max) = v.windows(2).map(|w| (w[1] - w[0]).abs()).fold((0.0, 0.0_f64), |(s, m), d| (s + d, m.max(d)));
    Mileage { mean_kw: total / (v.len() - 1) as f64, max_kw: max, total_kw: total }
}

/// Energy drawn from outside the plant: positive support only.
pub fn regulation_energy(support: &SupportSeries) -> f64 {
    support.values.iter().map(|s| s.max(0.0)).sum::<f64>() * support.step_hours()
}

pub fn commitment_satisfaction(committed_kwh: f64, unsatisfied_kwh: f64) -> Result<f64, MetricsError> {
    if !(committed_kwh > 0.0) {
        return Err(MetricsError::Undefined("no committed energy".into()));
    }
    if !(0.0..=committed_kwh).contains(&unsatisfied_kwh) {
        return Err(MetricsError::Undefined(format!(
            "unsatisfied energy {unsatisfied_kwh} kWh outside [0, {committed_kwh}]"
        )));
    }
    Ok(100.0 * (1.0 - unsatisfied_kwh / committed_kwh))
}

/// Percentage of regulation intervals in which every step's output stayed
/// within `tolerance_pct` of the request.
pub fn regd_satisfaction(output: &[f64], dispatch: &[DispatchSignal], tolerance_pct: f64) -> Result<f64, MetricsError> {
    if output.len() != dispatch.len() {
        return Err(MetricsError::LengthMismatch(output.len(), dispatch.len()));
    }
    // Intervals arrive in order; a step of the same interval never follows a
    // different one.
    let mut current: Option<(usize, bool)> = None;
    let (mut total, mut met) = (0usize, 0usize);
    let mut close = |c: Option<(usize, bool)>| {
        if let Some((_, ok)) = c {
            total += 1;
            met += usize::from(ok);
        }
    };
    for (d, &o) in dispatch.iter().zip(output) {
        let Some(k) = d.regd_interval else {
            close(current.take());
            continue;
        };
        let ok = (o - d.p_desired).abs() <= tolerance_pct / 100.0 * d.p_desired;
        current = match current {
            Some((j, prev)) if j == k => Some((j, prev && ok)),
            other => {
                close(other);
                Some((k, ok))
            }
        };
    }
    close(current);
    if total == 0 {
        return Err(MetricsError::Undefined("no active regulation intervals".into()));
    }
    Ok(100.0 * met as f64 / total as f64)
}

/// Root-mean-square and mean absolute error of `theoretical - actual`.
pub fn curve_errors(theoretical: &[f64], actual: &[f64]) -> Result<(f64, f64), MetricsError> {
    if theoretical.len() != actual.len() {
        return Err(MetricsError::LengthMismatch(theoretical.len(), actual.len()));
    }
    if theoretical.is_empty() {
        return Err(MetricsError::Undefined("empty series".into()));
    }
    let n = theoretical.len() as f64;
    let (sq, abs) = theoretical
        .iter()
        .zip(actual)
        .map(|(t, a)| t - a)
        .fold((0.0, 0.0), |(sq, abs), e| (sq + e * e, abs + e.abs()));
    Ok(((sq / n).sqrt(), abs / n))
}

/// Energy between the plant's potential and its commitment, where potential
/// is higher.
pub fn ancillary_potential(mpp: &[f64], commitment: &[f64], step_secs: u32) -> Result<f64, MetricsError> {
    if mpp.len() != commitment.len() {
        return Err(MetricsError::LengthMismatch(mpp.len(), commitment.len()));
    }
    Ok(mpp.iter().zip(commitment).map(|(m, c)| (m - c).max(0.0)).sum::<f64>() * f64::from(step_secs) / 3600.0)
}

/// Every metric for one run. Percentages that are undefined for the run
/// (nothing committed, no regulation window) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub controller: String,
    pub steps: usize,
    pub step_secs: u32,
    pub mileage_mean_kw: f64,
    pub mileage_max_kw: f64,
    pub mileage_total_kw: f64,
    pub regulation_kwh: f64,
    pub committed_kwh: f64,
    pub delivered_kwh: f64,
    pub curtailed_kwh: f64,
    pub commitment_satisfied_pct: Option<f64>,
    pub regd_satisfied_pct: Option<f64>,
    pub rmse_kw: f64,
    pub mae_kw: f64,
    pub ancillary_potential_kwh: f64,
}

/// Per-step series a report is computed from.
#[derive(Debug, Clone, Copy)]
pub struct RunSeries<'a> {
    pub dispatch: &'a [DispatchSignal],
    /// Realized plant output.
    pub output: &'a [f64],
    /// Plant output the controller expected to deliver.
    pub planned: &'a [f64],
    /// True plant potential.
    pub mpp: &'a [f64],
}

impl MetricsReport {
    pub fn compute(
        controller: &str,
        series: RunSeries<'_>,
        step_secs: u32,
        regd_tolerance_pct: f64,
    ) -> Result<Self, MetricsError> {
        let n = series.dispatch.len();
        for len in [series.output.len(), series.planned.len(), series.mpp.len()] {
            if len != n {
                return Err(MetricsError::LengthMismatch(n, len));
            }
        }
        let hours = f64::from(step_secs) / 3600.0;
        let support = SupportSeries::from_dispatch(series.dispatch, series.output, step_secs)?;
        let m = mileage(&support);
        let regulation_kwh = regulation_energy(&support);
        let committed_kwh = series.dispatch.iter().map(|d| d.p_desired).sum::<f64>() * hours;
        let commitment_satisfied_pct = commitment_satisfaction(committed_kwh, regulation_kwh.min(committed_kwh)).ok();
        let regd_satisfied_pct = regd_satisfaction(series.output, series.dispatch, regd_tolerance_pct).ok();
        let (rmse_kw, mae_kw) = if n == 0 { (0.0, 0.0) } else { curve_errors(series.planned, series.output)? };
        let commitment: Vec<f64> = series.dispatch.iter().map(|d| d.commitment_kw).collect();
        Ok(Self {
            controller: controller.to_string(),
            steps: n,
            step_secs,
            mileage_mean_kw: m.mean_kw,
            mileage_max_kw: m.max_kw,
            mileage_total_kw: m.total_kw,
            regulation_kwh,
            committed_kwh,
            delivered_kwh: series.output.iter().sum::<f64>() * hours,
            curtailed_kwh: series.mpp.iter().zip(series.output).map(|(m, o)| (m - o).max(0.0)).sum::<f64>() * hours,
            commitment_satisfied_pct,
            regd_satisfied_pct,
            rmse_kw,
            mae_kw,
            ancillary_potential_kwh: ancillary_potential(series.mpp, &commitment, step_secs)?,
        })
    }

    pub fn write_json<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = writer;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)
    }

    /// Header plus one data row.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.serialize(self)?;
        wtr.flush()
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};

    fn support(v: &[f64]) -> SupportSeries {
        SupportSeries { values: v.to_vec(), step_secs: 1 }
    }

    #[test]
    fn mileage_examples() {
        let m = mileage(&support(&[0.0, 10.0, 0.0]));
        assert_eq!((m.mean_kw, m.max_kw, m.total_kw), (10.0, 10.0, 20.0));
        let m = mileage(&support(&[3.0; 10]));
        assert_eq!((m.mean_kw, m.max_kw), (0.0, 0.0));
        let square: Vec<f64> = (0..100).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let m = mileage(&support(&square));
        assert_eq!((m.mean_kw, m.max_kw, m.total_kw), (2.0, 2.0, 198.0));
    }

    #[test]
    fn regulation_energy_examples() {
        assert_eq!(regulation_energy(&support(&[10.0; 3600])), 10.0);
        assert_eq!(regulation_energy(&support(&[0.0; 50])), 0.0);
        let half: Vec<f64> = (0..3600).map(|k| if k < 1800 { 10.0 } else { -10.0 }).collect();
        assert_eq!(regulation_energy(&support(&half)), 5.0);
    }

    #[test]
    fn commitment_satisfaction_examples() {
        assert_eq!(commitment_satisfaction(1000.0, 10.0).unwrap(), 99.0);
        assert_eq!(commitment_satisfaction(1000.0, 0.0).unwrap(), 100.0);
        assert!(commitment_satisfaction(0.0, 0.0).is_err());
        assert!(commitment_satisfaction(10.0, 11.0).is_err());
    }

    fn dispatch(p: &[f64], intervals: &[Option<usize>]) -> Vec<DispatchSignal> {
        let ts = Utc.with_ymd_and_hms(2010, 4, 1, 9, 0, 0).unwrap();
        p.iter()
            .zip(intervals)
            .map(|(&p, &k)| DispatchSignal {
                timestamp: ts,
                commitment_kw: p,
                regd_value: 0.0,
                reserve_kw: 0.0,
                p_desired: p,
                regd_interval: k,
            })
            .collect()
    }

    #[test]
    fn regd_satisfaction_counts_intervals() {
        let iv: Vec<Option<usize>> = (0..8).map(|k| Some(k / 2)).collect();
        let d = dispatch(&[100.0; 8], &iv);
        assert_eq!(regd_satisfaction(&[100.0; 8], &d, 0.5).unwrap(), 100.0);
        let mut out = vec![100.0; 8];
        out[5] = 90.0;
        assert_eq!(regd_satisfaction(&out, &d, 0.5).unwrap(), 75.0);
        let none = dispatch(&[100.0; 2], &[None, None]);
        assert!(regd_satisfaction(&[100.0; 2], &none, 0.5).is_err());
    }

    #[test]
    fn curve_error_examples() {
        assert_eq!(curve_errors(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, 0.0));
        assert_eq!(curve_errors(&[6.0, 7.0], &[1.0, 2.0]).unwrap(), (5.0, 5.0));
        let (rmse, mae) = curve_errors(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((rmse - 12.5_f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae, 3.5);
        assert!(curve_errors(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ancillary_potential_examples() {
        assert_eq!(ancillary_potential(&[5.0; 10], &[5.0; 10], 1).unwrap(), 0.0);
        assert_eq!(ancillary_potential(&[1500.0; 3600], &[500.0; 3600], 1).unwrap(), 1000.0);
    }

    #[test]
    fn report_serializes_undefined_as_null() {
        let d = dispatch(&[0.0; 3], &[None; 3]);
        let z = [0.0; 3];
        let r = MetricsReport::compute("x", RunSeries { dispatch: &d, output: &z, planned: &z, mpp: &z }, 1, 0.5).unwrap();
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"commitment_satisfied_pct\": null"));
        assert_eq!(MetricsReport::from_json_str(&text).unwrap(), r);
    }
}
