use std::fs;
use std::path::Path;

use super::run::METRICS_JSON_FILE;
use super::trace::FileSink;
use super::SimError;
use crate::metrics::MetricsReport;

/// One metric from two runs and their ratio `a / b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `None` when either side is undefined or `b` is zero while `a` is not.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub controller_a: String,
    pub controller_b: String,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn row(&self, metric: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:<28} {:>16} {:>16} {:>10}\n",
            "metric", self.controller_a, self.controller_b, "a/b"
        );
        for r in &self.rows {
            out.push_str(&format!("{:<28} {:>16} {:>16} {:>10}\n", r.metric, fmt(r.a), fmt(r.b), fmt(r.ratio)));
        }
        out
    }
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    let (a, b) = (a?, b?);
    if b == 0.0 {
        (a == 0.0).then_some(1.0)
    } else {
        Some(a / b)
    }
}

fn rows(a: &MetricsReport, b: &MetricsReport) -> Vec<ComparisonRow> {
    let pick: [(&'static str, fn(&MetricsReport) -> Option<f64>); 12] = [
        ("mileage_mean_kw", |m| Some(m.mileage_mean_kw)),
        ("mileage_max_kw", |m| Some(m.mileage_max_kw)),
        ("mileage_total_kw", |m| Some(m.mileage_total_kw)),
        ("regulation_kwh", |m| Some(m.regulation_kwh)),
        ("committed_kwh", |m| Some(m.committed_kwh)),
        ("delivered_kwh", |m| Some(m.delivered_kwh)),
        ("curtailed_kwh", |m| Some(m.curtailed_kwh)),
        ("commitment_satisfied_pct", |m| m.commitment_satisfied_pct),
        ("regd_satisfied_pct", |m| m.regd_satisfied_pct),
        ("rmse_kw", |m| Some(m.rmse_kw)),
        ("mae_kw", |m| Some(m.mae_kw)),
        ("ancillary_potential_kwh", |m| Some(m.ancillary_potential_kwh)),
    ];
    pick.iter()
        .map(|(metric, f)| {
            let (va, vb) = (f(a), f(b));
            ComparisonRow { metric, a: va, b: vb, ratio: ratio(va, vb) }
        })
        .collect()
}

fn read_metrics(dir: &Path) -> Result<MetricsReport, SimError> {
    let path = dir.join(METRICS_JSON_FILE);
    let text = fs::read_to_string(&path).map_err(SimError::io(&path))?;
    MetricsReport::from_json_str(&text).map_err(|e| SimError::Data(format!("{}: {e}", path.display())))
}

/// (timestamp, p_desired) per step from a run's plant trace.
fn read_grid(dir: &Path) -> Result<Vec<(String, f64)>, SimError> {
    let path = dir.join(FileSink::PLANT_FILE);
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| SimError::Io { path: path.clone(), source: std::io::Error::other(e) })?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| SimError::Data(format!("{}: {e}", path.display())))?;
        let ts = rec.get(0).unwrap_or_default().to_string();
        let p = rec
            .get(1)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| SimError::Data(format!("{}: bad p_desired_kw in row for {ts}", path.display())))?;
        rows.push((ts, p));
    }
    Ok(rows)
}

/// Compares the metrics of two run directories. Both runs must share the
/// same time grid and dispatch.
pub fn compare_runs(dir_a: &Path, dir_b: &Path) -> Result<Comparison, SimError> {
    let (ma, mb) = (read_metrics(dir_a)?, read_metrics(dir_b)?);
    if ma.step_secs != mb.step_secs || ma.steps != mb.steps {
        return Err(SimError::Data(format!(
            "runs differ in grid: {} x {} s vs {} x {} s",
            ma.steps, ma.step_secs, mb.steps, mb.step_secs
        )));
    }
    let (ga, gb) = (read_grid(dir_a)?, read_grid(dir_b)?);
    if ga.len() != gb.len() {
        return Err(SimError::Data(format!("plant traces differ in length: {} vs {}", ga.len(), gb.len())));
    }
    for ((ta, pa), (tb, pb)) in ga.iter().zip(&gb) {
        if ta != tb {
            return Err(SimError::Data(format!("plant traces are on different grids: {ta} vs {tb}")));
        }
        if (pa - pb).abs() > 1e-6 * pa.abs().max(1.0) {
            return Err(SimError::Data(format!("runs were given different dispatch at {ta}: {pa} vs {pb}")));
        }
    }
    Ok(Comparison { controller_a: ma.controller.clone(), controller_b: mb.controller.clone(), rows: rows(&ma, &mb) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_edge_cases() {
        assert_eq!(ratio(Some(4.0), Some(2.0)), Some(2.0));
        assert_eq!(ratio(Some(0.0), Some(0.0)), Some(1.0));
        assert_eq!(ratio(Some(1.0), Some(0.0)), None);
        assert_eq!(ratio(None, Some(1.0)), None);
    }
}
