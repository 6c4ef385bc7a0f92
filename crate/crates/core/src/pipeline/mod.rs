//! Ingestion, aggregation, transforms and design assembly.

mod aggregate;
mod design;
mod panel;
mod transform;

pub use aggregate::{
    aggregate_events, aggregate_events_parallel, normalize_area_id, parse_timestamp,
    read_event_csv, weekend_indicator, AggregatedCounts, AggregationReport, CalendarSpan,
    EventTally, Granularity,
};
pub use design::{build_design, summarize, Design, DesignSpec, Summary, Trend, MEAN_MONTH_DAYS};
pub use panel::{AreaPanel, PanelDate, PanelVariable};
pub use transform::{apply_transform, invert_transform, TransformKind, TransformSpec};

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};

/// One row per area with named columns (a community snapshot extract).
#[derive(Debug, Clone, PartialEq)]
pub struct AreaTable {
    pub ids: Vec<String>,
    pub headers: Vec<String>,
    rows: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl AreaTable {
    pub fn read_csv<R: Read>(reader: R, id_column: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let id_col = headers
            .iter()
            .position(|h| h == id_column)
            .ok_or_else(|| Error::Parse(format!("table lacks id column `{id_column}`")))?;
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut index = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            let id = normalize_area_id(row.get(id_col).unwrap_or(""))
                .ok_or_else(|| Error::Parse("empty area id in table".into()))?;
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            rows.push(row.iter().map(str::to_string).collect());
        }
        Ok(AreaTable { ids, headers, rows, index })
    }

    /// Numeric column values ordered like `unit_ids`.
    pub fn column(&self, name: &str, unit_ids: &[String]) -> Result<Vec<f64>> {
        let c = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))?;
        unit_ids
            .iter()
            .map(|id| {
                let r = *self
                    .index
                    .get(id)
                    .ok_or_else(|| Error::Panel(format!("table has no row for area `{id}`")))?;
                let raw = self.rows[r].get(c).map(|s| s.trim()).unwrap_or("");
                raw.replace(',', "").parse::<f64>().map_err(|_| {
                    Error::Parse(format!("column `{name}`, area `{id}`: bad number `{raw}`"))
                })
            })
            .collect()
    }
}
