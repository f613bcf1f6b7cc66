use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{clamp_irradiance, Ingested, IngestError, IrradianceDataset};
use crate::time::format_timestamp;

/// Column mapping for an irradiance CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp_column: String,
    /// Sensor columns to load, in order. `None` loads every non-timestamp column.
    pub sensor_columns: Option<Vec<String>>,
    /// Grid step in seconds. Inferred from the first two rows when absent.
    pub step_secs: Option<u32>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { timestamp_column: "timestamp".into(), sensor_columns: None, step_secs: None }
    }
}

pub(crate) fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Some(ts.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .map(|naive| naive.and_utc())
}

fn parse_cell(text: &str) -> Result<f64, ()> {
    let text = text.trim();
    if text.is_empty() || text.eq_ignore_ascii_case("nan") || text.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    text.parse::<f64>().map_err(|_| ())
}

/// Loads an irradiance CSV with header `timestamp,<sensor_1>,...,<sensor_n>`.
///
/// Values outside `[0, 1500]` W/m² are clamped and counted. Empty cells become
/// gaps. A timestamp jump of `k` whole steps inserts `k - 1` gap rows; any other
/// irregularity is a validation error.
pub fn parse_irradiance_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<Ingested<IrradianceDataset>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.into(), source })?;
    read_irradiance_csv(file, schema)
}

pub fn read_irradiance_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
) -> Result<Ingested<IrradianceDataset>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(IngestError::csv)?.clone();

    let ts_col = headers
        .iter()
        .position(|h| h == schema.timestamp_column)
        .ok_or_else(|| IngestError::Schema(format!("missing column `{}`", schema.timestamp_column)))?;
    let sensors: Vec<String> = match &schema.sensor_columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    if sensors.is_empty() {
        return Err(IngestError::Schema("at least one sensor column is required".into()));
    }
    let sensor_cols = sensors
        .iter()
        .map(|s| {
            headers
                .iter()
                .position(|h| h == s)
                .ok_or_else(|| IngestError::Schema(format!("missing sensor column `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows: Vec<(u64, DateTime<Utc>, Vec<f64>)> = Vec::new();
    let mut clamped = 0usize;
    for record in rdr.records() {
        let record = record.map_err(IngestError::csv)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ts_text = record.get(ts_col).unwrap_or_default();
        let ts = parse_timestamp(ts_text).ok_or_else(|| IngestError::Parse {
            line,
            message: format!("unparseable timestamp `{ts_text}`"),
        })?;
        let mut values = Vec::with_capacity(sensor_cols.len());
        for (&col, name) in sensor_cols.iter().zip(&sensors) {
            let cell = record.get(col).unwrap_or_default();
            let v = parse_cell(cell).map_err(|_| IngestError::Parse {
                line,
                message: format!("invalid value `{cell}` for sensor {name}"),
            })?;
            let (v, was_clamped) = clamp_irradiance(v);
            clamped += usize::from(was_clamped);
            values.push(v);
        }
        rows.push((line, ts, values));
    }
    if rows.is_empty() {
        return Err(IngestError::Validation("irradiance file has no data rows".into()));
    }

    let step_ms: i64 = match (schema.step_secs, rows.get(1)) {
        (Some(step), _) => i64::from(step) * 1000,
        (None, Some((_, ts1, _))) => (*ts1 - rows[0].1).num_milliseconds(),
        (None, None) => 1000,
    };
    if step_ms <= 0 {
        return Err(IngestError::Validation(format!(
            "non-monotonic timestamps at line {}",
            rows.get(1).map(|r| r.0).unwrap_or(0)
        )));
    }
    if step_ms % 1000 != 0 {
        return Err(IngestError::Validation("time step must be a whole number of seconds".into()));
    }

    let n = sensors.len();
    let mut data = Vec::with_capacity(rows.len() * n);
    let start = rows[0].1;
    let mut prev = start;
    for (i, (line, ts, values)) in rows.into_iter().enumerate() {
        if i > 0 {
            let diff = (ts - prev).num_milliseconds();
            if diff <= 0 {
                return Err(IngestError::Validation(format!("non-monotonic timestamps at line {line}")));
            }
            if diff % step_ms != 0 {
                return Err(IngestError::Validation(format!(
                    "timestamp at line {line} is off the {} s grid",
                    step_ms / 1000
                )));
            }
            let skipped = (diff / step_ms - 1) as usize;
            data.extend(std::iter::repeat_n(f64::NAN, skipped * n));
        }
        data.extend(values);
        prev = ts;
    }

    let dataset = IrradianceDataset::new(start, (step_ms / 1000) as u32, sensors, data)?;
    Ok(Ingested { data: dataset, clamped })
}

/// Writes a dataset in the same format [`read_irradiance_csv`] accepts.
pub fn write_irradiance_csv<W: Write>(dataset: &IrradianceDataset, writer: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string()];
    header.extend(dataset.sensors.iter().cloned());
    wtr.write_record(&header)?;
    for t in 0..dataset.len() {
        let mut record = vec![format_timestamp(&dataset.timestamp(t))];
        record.extend(dataset.row(t).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        wtr.write_record(&record)?;
    }
    wtr.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Ingested<IrradianceDataset>, IngestError> {
        read_irradiance_csv(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn two_rows_one_sensor() {
        let got = read("timestamp,s1\n2010-04-01T05:00:00Z,500\n2010-04-01T05:00:01Z,510\n").unwrap();
        assert_eq!(got.data.len(), 2);
        assert_eq!(got.data.row(0), &[500.0]);
        assert_eq!(got.data.row(1), &[510.0]);
        assert_eq!(got.data.step_secs, 1);
        assert_eq!(got.clamped, 0);
    }

    #[test]
    fn negative_value_is_clamped_and_counted() {
        let got = read("timestamp,s1\n2010-04-01T05:00:00Z,-3\n2010-04-01T05:00:01Z,1600\n").unwrap();
        assert_eq!(got.data.row(0), &[0.0]);
        assert_eq!(got.data.row(1), &[1500.0]);
        assert_eq!(got.clamped, 2);
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let err = read("timestamp,s1\n2010-04-01T05:00:00Z,1\n2010-04-01T05:00:00Z,2\n").unwrap_err();
        assert!(matches!(err, IngestError::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read("timestamp,s1\n2010-04-01T05:00:00Z,1\n2010-04-01T05:00:01Z,abc\n").unwrap_err();
        match err {
            IngestError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_sensor_column_is_schema_error() {
        let schema = CsvSchema { sensor_columns: Some(vec!["s2".into()]), ..CsvSchema::default() };
        let err = read_irradiance_csv("timestamp,s1\n2010-04-01T05:00:00Z,1\n".as_bytes(), &schema).unwrap_err();
        assert!(matches!(err, IngestError::Schema(_)));
        let err = read("time,s1\n2010-04-01T05:00:00Z,1\n").unwrap_err();
        assert!(matches!(err, IngestError::Schema(_)));
        let err = read("timestamp\n2010-04-01T05:00:00Z\n").unwrap_err();
        assert!(matches!(err, IngestError::Schema(_)));
    }

    #[test]
    fn skipped_rows_become_gaps() {
        let got = read("timestamp,s1\n2010-04-01T05:00:00Z,100\n2010-04-01T05:00:01Z,110\n2010-04-01T05:00:04Z,140\n")
            .unwrap();
        assert_eq!(got.data.len(), 5);
        assert!(got.data.value(2, 0).is_nan() && got.data.value(3, 0).is_nan());
        assert_eq!(got.data.missing_count(), 2);
    }

    #[test]
    fn naive_timestamps_are_utc() {
        let got = read("timestamp,a,b\n2010-04-01 05:00:00,1,\n2010-04-01 05:00:02,3,4\n").unwrap();
        assert_eq!(got.data.step_secs, 2);
        assert!(got.data.value(0, 1).is_nan());
        assert_eq!(format_timestamp(&got.data.start_time), "2010-04-01T05:00:00Z");
    }
}
