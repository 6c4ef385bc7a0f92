//! Area panels and the canonical long-format panel file
//! (`area_id,date,variable,value`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::transform::TransformKind;
use crate::error::{Error, Result};
use crate::graph::{compare_ids, ArealGraph};

/// A panel date: a calendar day, or a whole-year sentinel for totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PanelDate {
    Year(i32),
    Day(NaiveDate),
}

impl fmt::Display for PanelDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PanelDate::Year(y) => write!(f, "{y}"),
            PanelDate::Day(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

impl std::str::FromStr for PanelDate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(y) = s.parse::<i32>() {
            return Ok(PanelDate::Year(y));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(PanelDate::Day)
            .map_err(|_| Error::Parse(format!("bad panel date `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelVariable {
    /// Slice-major values: `values[t * K + k]`; length K for time-invariant
    /// variables, K·T otherwise.
    pub values: Vec<f64>,
    pub time_invariant: bool,
    pub transform: TransformKind,
}

/// K areas × T dates of named variables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AreaPanel {
    unit_ids: Vec<String>,
    dates: Vec<PanelDate>,
    variables: BTreeMap<String, PanelVariable>,
}

impl AreaPanel {
    pub fn new(unit_ids: Vec<String>, dates: Vec<PanelDate>) -> Result<Self> {
        if unit_ids.is_empty() || dates.is_empty() {
            return Err(Error::Panel("panel needs at least one unit and one date".into()));
        }
        let unique: BTreeSet<&String> = unit_ids.iter().collect();
        if unique.len() != unit_ids.len() {
            return Err(Error::Panel("duplicate unit ids".into()));
        }
        check_dates(&dates)?;
        Ok(AreaPanel {
            unit_ids,
            dates,
            variables: BTreeMap::new(),
        })
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn dates(&self) -> &[PanelDate] {
        &self.dates
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_times(&self) -> usize {
        self.dates.len()
    }

    pub fn variable_names(&self) -> impl Iterator<Item = &str> {
        self.variables.keys().map(String::as_str)
    }

    pub fn variable(&self, name: &str) -> Result<&PanelVariable> {
        self.variables
            .get(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Inserts a variable with K (time-invariant) or K·T slice-major values.
    pub fn insert(&mut self, name: &str, values: Vec<f64>, transform: TransformKind) -> Result<()> {
        let (k, t) = (self.n_units(), self.n_times());
        let time_invariant = if values.len() == k * t {
            t == 1
        } else if values.len() == k {
            true
        } else {
            return Err(Error::Panel(format!(
                "variable `{name}` has {} values; expected {k} or {}",
                values.len(),
                k * t
            )));
        };
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Panel(format!(
                "variable `{name}` has a non-finite value at area `{}`",
                self.unit_ids[i % k]
            )));
        }
        self.variables.insert(
            name.to_string(),
            PanelVariable {
                values,
                time_invariant,
                transform,
            },
        );
        Ok(())
    }

    /// Values broadcast to K·T, slice-major.
    pub fn expanded(&self, name: &str) -> Result<Vec<f64>> {
        let var = self.variable(name)?;
        let t = self.n_times();
        if var.time_invariant && t > 1 {
            Ok(var.values.iter().copied().cycle().take(var.values.len() * t).collect())
        } else {
            Ok(var.values.clone())
        }
    }

    /// Reorders units to match `graph`; the unit sets must coincide.
    pub fn align_to(&self, graph: &ArealGraph) -> Result<AreaPanel> {
        let k = self.n_units();
        let index: HashMap<&str, usize> =
            self.unit_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        if graph.len() != k {
            return Err(Error::Panel(format!(
                "panel has {k} areas but the graph has {}",
                graph.len()
            )));
        }
        let mut order = Vec::with_capacity(k);
        for id in graph.unit_ids() {
            let i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Panel(format!("graph area `{id}` missing from panel")))?;
            order.push(*i);
        }
        let mut out = AreaPanel {
            unit_ids: graph.unit_ids().to_vec(),
            dates: self.dates.clone(),
            variables: BTreeMap::new(),
        };
        for (name, var) in &self.variables {
            let slices = var.values.len() / k;
            let mut values = Vec::with_capacity(var.values.len());
            for t in 0..slices {
                values.extend(order.iter().map(|&i| var.values[t * k + i]));
            }
            out.variables.insert(
                name.clone(),
                PanelVariable {
                    values,
                    ..var.clone()
                },
            );
        }
        Ok(out)
    }

    /// Writes the long format. Time-invariant variables use the year sentinel.
    pub fn write_long_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["area_id", "date", "variable", "value"])?;
        let k = self.n_units();
        let sentinel = self.sentinel_year();
        for (name, var) in &self.variables {
            let slices = var.values.len() / k;
            for t in 0..slices {
                let date = if var.time_invariant && self.n_times() > 1 {
                    PanelDate::Year(sentinel)
                } else {
                    self.dates[t]
                };
                for (i, id) in self.unit_ids.iter().enumerate() {
                    let v = var.values[t * k + i];
                    w.write_record([id.as_str(), &date.to_string(), name, &format_value(v)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    fn sentinel_year(&self) -> i32 {
        match self.dates[0] {
            PanelDate::Year(y) => y,
            PanelDate::Day(d) => chrono::Datelike::year(&d),
        }
    }

    /// Reads the long format. Variables carrying only year-sentinel rows are
    /// time-invariant; all day-dated variables must cover the same dates.
    pub fn read_long_csv<R: Read>(reader: R) -> Result<AreaPanel> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse(format!("panel file lacks column `{name}`")))
        };
        let (ac, dc, vc, xc) = (col("area_id")?, col("date")?, col("variable")?, col("value")?);
        let mut cells: BTreeMap<String, HashMap<(String, PanelDate), f64>> = BTreeMap::new();
        let mut areas: BTreeSet<String> = BTreeSet::new();
        let mut days: BTreeSet<NaiveDate> = BTreeSet::new();
        let mut years: BTreeSet<i32> = BTreeSet::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let area = row.get(ac).unwrap_or("").trim().to_string();
            let date: PanelDate = row.get(dc).unwrap_or("").parse()?;
            let name = row.get(vc).unwrap_or("").trim().to_string();
            let raw = row.get(xc).unwrap_or("").trim();
            let value: f64 = raw
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad value `{raw}`", line + 2)))?;
            match date {
                PanelDate::Day(d) => {
                    days.insert(d);
                }
                PanelDate::Year(y) => {
                    years.insert(y);
                }
            }
            areas.insert(area.clone());
            if cells.entry(name.clone()).or_default().insert((area, date), value).is_some() {
                return Err(Error::Panel(format!("duplicate cell for variable `{name}`")));
            }
        }
        let mut unit_ids: Vec<String> = areas.into_iter().collect();
        unit_ids.sort_by(|a, b| compare_ids(a, b));
        let dates: Vec<PanelDate> = if days.is_empty() {
            match years.len() {
                1 => vec![PanelDate::Year(*years.iter().next().unwrap())],
                0 => return Err(Error::Panel("panel file is empty".into())),
                _ => return Err(Error::Panel("multiple year sentinels in one panel".into())),
            }
        } else {
            days.into_iter().map(PanelDate::Day).collect()
        };
        let mut panel = AreaPanel::new(unit_ids, dates)?;
        let k = panel.n_units();
        for (name, map) in cells {
            let invariant = map.keys().all(|(_, d)| matches!(d, PanelDate::Year(_)));
            let slice_dates: Vec<PanelDate> = if invariant {
                let y = map.keys().next().map(|(_, d)| *d).unwrap();
                vec![y]
            } else {
                panel.dates.clone()
            };
            let mut values = Vec::with_capacity(k * slice_dates.len());
            for date in &slice_dates {
                for id in &panel.unit_ids {
                    let v = map.get(&(id.clone(), *date)).ok_or_else(|| {
                        Error::Panel(format!("variable `{name}` missing area `{id}` at {date}"))
                    })?;
                    values.push(*v);
                }
            }
            if values.len() != map.len() {
                return Err(Error::Panel(format!(
                    "variable `{name}` mixes year-sentinel and daily rows"
                )));
            }
            panel.insert(&name, values, TransformKind::None)?;
        }
        Ok(panel)
    }
}

fn check_dates(dates: &[PanelDate]) -> Result<()> {
    if dates.len() == 1 {
        return Ok(());
    }
    for pair in dates.windows(2) {
        match pair {
            [PanelDate::Day(a), PanelDate::Day(b)] if *b == *a + chrono::Days::new(1) => {}
            _ => {
                return Err(Error::Panel(format!(
                    "dates must be consecutive calendar days ({} then {})",
                    pair[0], pair[1]
                )))
            }
        }
    }
    Ok(())
}

/// Shortest representation that round-trips.
fn format_value(v: f64) -> String {
    format!("{v}")
}
