//! Event aggregation: trip and crime records to per-area (per-day) counts.

use std::collections::HashMap;
use std::io::Read;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Weekday};
use rayon::prelude::*;
use serde::Serialize;

use super::panel::PanelDate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Total,
    Daily,
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CalendarSpan {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl CalendarSpan {
    pub fn year(year: i32) -> Self {
        CalendarSpan {
            start: NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(year, 12, 31).expect("valid year"),
        }
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.start.iter_days().take(self.days()).collect()
    }

    fn day_index(&self, d: NaiveDate) -> Option<usize> {
        (d >= self.start && d <= self.end).then(|| (d - self.start).num_days() as usize)
    }
}

/// 1 for Saturday or Sunday, else 0.
pub fn weekend_indicator(date: NaiveDate) -> u8 {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun) as u8
}

/// Parses the timestamp layouts used by the Chicago data portal plus ISO
/// forms. Only the civil date is kept.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDate> {
    let s = raw.trim();
    const DATETIME: [&str; 5] = [
        "%m/%d/%Y %I:%M:%S %p",
        "%m/%d/%Y %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
    ];
    for fmt in DATETIME {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.date());
        }
    }
    for fmt in ["%Y-%m-%d", "%m/%d/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return Some(d);
        }
    }
    None
}

/// Normalizes area ids: trims, and writes integral numbers without a
/// fractional part (`"8.0"` → `"8"`).
pub fn normalize_area_id(raw: &str) -> Option<String> {
    let s = raw.trim();
    if s.is_empty() {
        return None;
    }
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 1e15 => Some(format!("{}", v as i64)),
        _ => Some(s.to_string()),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AggregationReport {
    pub total: usize,
    pub accepted: usize,
    pub skipped_timestamp: usize,
    pub dropped_area: usize,
    pub out_of_span: usize,
}

/// Per-worker tally; tallies merge by summation.
#[derive(Debug, Clone)]
pub struct EventTally<'a> {
    index: &'a HashMap<String, usize>,
    span: CalendarSpan,
    granularity: Granularity,
    counts: HashMap<(usize, usize), u64>,
    report: AggregationReport,
}

impl<'a> EventTally<'a> {
    pub fn new(index: &'a HashMap<String, usize>, span: CalendarSpan, granularity: Granularity) -> Self {
        EventTally {
            index,
            span,
            granularity,
            counts: HashMap::new(),
            report: AggregationReport::default(),
        }
    }

    pub fn add(&mut self, timestamp: &str, area: &str) {
        self.report.total += 1;
        let Some(date) = parse_timestamp(timestamp) else {
            self.report.skipped_timestamp += 1;
            return;
        };
        let Some(day) = self.span.day_index(date) else {
            self.report.out_of_span += 1;
            return;
        };
        let Some(&unit) = normalize_area_id(area).and_then(|id| self.index.get(&id)) else {
            self.report.dropped_area += 1;
            return;
        };
        let t = match self.granularity {
            Granularity::Total => 0,
            Granularity::Daily => day,
        };
        *self.counts.entry((unit, t)).or_default() += 1;
        self.report.accepted += 1;
    }

    pub fn merge(mut self, other: EventTally<'a>) -> Self {
        for (key, n) in other.counts {
            *self.counts.entry(key).or_default() += n;
        }
        let r = &mut self.report;
        r.total += other.report.total;
        r.accepted += other.report.accepted;
        r.skipped_timestamp += other.report.skipped_timestamp;
        r.dropped_area += other.report.dropped_area;
        r.out_of_span += other.report.out_of_span;
        self
    }

    pub fn finish(self) -> Result<AggregatedCounts> {
        let r = &self.report;
        if r.total > 0 && r.skipped_timestamp * 10 > r.total {
            return Err(Error::TooManySkipped {
                skipped: r.skipped_timestamp,
                total: r.total,
            });
        }
        if r.skipped_timestamp > 0 {
            log::warn!("skipped {} rows with unparseable timestamps", r.skipped_timestamp);
        }
        if r.dropped_area > 0 {
            log::warn!("dropped {} rows with unknown or empty area id", r.dropped_area);
        }
        let k = self.index.len();
        let dates = match self.granularity {
            Granularity::Total => vec![PanelDate::Year(self.span.start.year())],
            Granularity::Daily => self.span.dates().into_iter().map(PanelDate::Day).collect(),
        };
        let mut values = vec![0.0; k * dates.len()];
        for ((unit, t), n) in self.counts {
            values[t * k + unit] = n as f64;
        }
        Ok(AggregatedCounts {
            dates,
            values,
            report: self.report,
        })
    }
}

/// Counts laid out slice-major: `values[t * K + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedCounts {
    pub dates: Vec<PanelDate>,
    pub values: Vec<f64>,
    pub report: AggregationReport,
}

fn unit_index(unit_ids: &[String]) -> HashMap<String, usize> {
    unit_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Single-pass aggregation of `(timestamp, area_id)` records.
pub fn aggregate_events<I, S, T>(
    records: I,
    unit_ids: &[String],
    granularity: Granularity,
    span: CalendarSpan,
) -> Result<AggregatedCounts>
where
    I: IntoIterator<Item = (S, T)>,
    S: AsRef<str>,
    T: AsRef<str>,
{
    let index = unit_index(unit_ids);
    let mut tally = EventTally::new(&index, span, granularity);
    for (ts, area) in records {
        tally.add(ts.as_ref(), area.as_ref());
    }
    tally.finish()
}

/// Parallel aggregation over an in-memory record slice.
pub fn aggregate_events_parallel(
    records: &[(String, String)],
    unit_ids: &[String],
    granularity: Granularity,
    span: CalendarSpan,
) -> Result<AggregatedCounts> {
    let index = unit_index(unit_ids);
    records
        .par_chunks(4096)
        .fold(
            || EventTally::new(&index, span, granularity),
            |mut tally, chunk| {
                for (ts, area) in chunk {
                    tally.add(ts, area);
                }
                tally
            },
        )
        .reduce(|| EventTally::new(&index, span, granularity), EventTally::merge)
        .finish()
}

/// Streams `(timestamp, area)` pairs out of a CSV extract with a header row.
pub fn read_event_csv<R: Read>(
    reader: R,
    timestamp_column: &str,
    area_column: &str,
) -> Result<impl Iterator<Item = Result<(String, String)>>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse(format!("CSV lacks column `{name}`")))
    };
    let (tc, ac) = (find(timestamp_column)?, find(area_column)?);
    Ok(rdr.into_records().map(move |row| {
        let row = row?;
        Ok((
            row.get(tc).unwrap_or("").to_string(),
            row.get(ac).unwrap_or("").to_string(),
        ))
    }))
}
