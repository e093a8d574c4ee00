//! Time-axis labels: ISO dates, uniform cadences and ISO week names.

use chrono::{Datelike, Days, NaiveDate};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Monday of ISO week 1, 2010. Default first date of synthetic series.
pub const DEFAULT_START: (i32, u32, u32) = (2010, 1, 4);

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

pub fn format_date(d: NaiveDate) -> String {
    d.format(DATE_FORMAT).to_string()
}

/// ISO week name such as `2015-W03`.
pub fn iso_week_label(d: NaiveDate) -> String {
    let w = d.iso_week();
    format!("{}-W{:02}", w.year(), w.week())
}

/// `n` dates starting at `start`, `step_days` apart.
pub fn date_labels(start: NaiveDate, step_days: u64, n: usize) -> Result<Vec<String>, String> {
    (0..n as u64)
        .map(|i| {
            start
                .checked_add_days(Days::new(i * step_days))
                .map(format_date)
                .ok_or_else(|| format!("date {i} steps after {start} is out of range"))
        })
        .collect()
}

/// Uniform spacing of an existing time axis, used to label future steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    Days { last: NaiveDate, step_days: u64 },
    /// Integer labels (for tensors built without dates).
    Index { last: i64, step: i64 },
}

impl Cadence {
    /// Detects the cadence of `labels`: all ISO dates, or all integers,
    /// evenly spaced.
    pub fn of_labels(labels: &[String]) -> Result<Self, String> {
        if labels.len() < 2 {
            return Err("need at least two time labels to infer a cadence".into());
        }
        if let Some(dates) = labels.iter().map(|l| parse_date(l)).collect::<Option<Vec<_>>>() {
            let step = (dates[1] - dates[0]).num_days();
            if step <= 0 || dates.windows(2).any(|w| (w[1] - w[0]).num_days() != step) {
                return Err("time labels are not evenly spaced dates".into());
            }
            return Ok(Cadence::Days {
                last: dates[dates.len() - 1],
                step_days: step as u64,
            });
        }
        if let Some(ints) = labels.iter().map(|l| l.trim().parse::<i64>().ok()).collect::<Option<Vec<_>>>() {
            let step = ints[1] - ints[0];
            if step <= 0 || ints.windows(2).any(|w| w[1] - w[0] != step) {
                return Err("time labels are not evenly spaced integers".into());
            }
            return Ok(Cadence::Index {
                last: ints[ints.len() - 1],
                step,
            });
        }
        Err("time labels are neither ISO dates nor integers".into())
    }

    /// Labels of the `n` steps after the last known one.
    pub fn next_labels(&self, n: usize) -> Result<Vec<String>, String> {
        match *self {
            Cadence::Days { last, step_days } => {
                let first = last
                    .checked_add_days(Days::new(step_days))
                    .ok_or_else(|| "date overflow".to_string())?;
                date_labels(first, step_days, n)
            }
            Cadence::Index { last, step } => Ok((1..=n as i64).map(|i| (last + i * step).to_string()).collect()),
        }
    }
}
