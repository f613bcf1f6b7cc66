//! Uniform simulation time grid and time-of-day helpers.

use chrono::{DateTime, Duration, NaiveTime, SecondsFormat, Timelike, Utc};

pub const SECS_PER_DAY: u32 = 86_400;

/// A fixed-step time grid. Local clock time is UTC shifted by a constant
/// offset; no daylight-saving arithmetic is performed.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub start: DateTime<Utc>,
    pub step_secs: u32,
    pub len: usize,
    pub utc_offset_secs: i32,
}

impl TimeGrid {
    pub fn new(start: DateTime<Utc>, step_secs: u32, len: usize) -> Self {
        Self { start, step_secs, len, utc_offset_secs: 0 }
    }

    pub fn with_utc_offset(mut self, offset_secs: i32) -> Self {
        self.utc_offset_secs = offset_secs;
        self
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(index as i64 * i64::from(self.step_secs))
    }

    /// Local wall-clock time of a step.
    pub fn local(&self, index: usize) -> DateTime<Utc> {
        self.timestamp(index) + Duration::seconds(i64::from(self.utc_offset_secs))
    }

    /// Seconds since local midnight.
    pub fn local_secs_of_day(&self, index: usize) -> u32 {
        self.local(index).num_seconds_from_midnight()
    }

    pub fn local_hour(&self, index: usize) -> u32 {
        self.local(index).hour()
    }

    /// Whole local days elapsed since the local day containing the first step.
    pub fn local_day(&self, index: usize) -> i64 {
        let first = self.local(0).date_naive();
        (self.local(index).date_naive() - first).num_days()
    }

    pub fn step_hours(&self) -> f64 {
        f64::from(self.step_secs) / 3600.0
    }

    /// Timestamps shifted into local clock time, for hour bucketing.
    pub fn local_timestamps(&self) -> Vec<DateTime<Utc>> {
        (0..self.len).map(|i| self.local(i)).collect()
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses `HH:MM` or `HH:MM:SS` into seconds since midnight. `24:00:00` is
/// accepted as the end of the day.
pub fn parse_time_of_day(text: &str) -> Option<u32> {
    let text = text.trim();
    if text == "24:00" || text == "24:00:00" {
        return Some(SECS_PER_DAY);
    }
    NaiveTime::parse_from_str(text, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(text, "%H:%M"))
        .ok()
        .map(|t| t.num_seconds_from_midnight())
}

pub fn format_time_of_day(secs: u32) -> String {
    format!("{:02}:{:02}:{:02}", secs / 3600, (secs / 60) % 60, secs % 60)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn grid_local_time_applies_offset() {
        let start = Utc.with_ymd_and_hms(2010, 4, 1, 15, 0, 0).unwrap();
        let grid = TimeGrid::new(start, 1, 10).with_utc_offset(-10 * 3600);
        assert_eq!(grid.local_hour(0), 5);
        assert_eq!(grid.local_secs_of_day(5), 5 * 3600 + 5);
        assert_eq!(grid.local_day(9), 0);
    }

    #[test]
    fn time_of_day_round_trip() {
        assert_eq!(parse_time_of_day("09:00:00"), Some(9 * 3600));
        assert_eq!(parse_time_of_day("17:30"), Some(17 * 3600 + 1800));
        assert_eq!(parse_time_of_day("24:00"), Some(SECS_PER_DAY));
        assert_eq!(parse_time_of_day("nine"), None);
        assert_eq!(format_time_of_day(8 * 3600 + 59 * 60), "08:59:00");
    }
}
