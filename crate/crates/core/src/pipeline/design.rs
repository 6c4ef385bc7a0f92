use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::aggregate::weekend_indicator;
use super::panel::{AreaPanel, PanelDate};
use crate::error::{Error, Result};

/// Mean month length in days; the default trend divisor.
pub const MEAN_MONTH_DAYS: f64 = 30.44;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Trend {
    None,
    /// Column value `t / divisor` for 1-based day index t.
    ScaledDay { divisor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub predictors: Vec<String>,
    pub trend: Trend,
    pub weekend: bool,
    pub intercept: bool,
}

impl DesignSpec {
    pub fn spatial(predictors: &[&str]) -> Self {
        DesignSpec {
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            trend: Trend::None,
            weekend: false,
            intercept: true,
        }
    }
}

/// Design matrix with one row per (t, k) cell, slice-major (`row = t·K + k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n_units: usize,
    pub n_times: usize,
    pub columns: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Design {
    pub fn from_columns(n_units: usize, n_times: usize, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let rows = n_units * n_times;
        for (name, col) in &columns {
            if col.len() != rows {
                return Err(Error::Dimension(format!(
                    "column `{name}` has {} rows, expected {rows}",
                    col.len()
                )));
            }
        }
        let p = columns.len();
        let matrix = DMatrix::from_fn(rows, p, |r, c| columns[c].1[r]);
        Ok(Design {
            n_units,
            n_times,
            columns: columns.into_iter().map(|(n, _)| n).collect(),
            matrix,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    /// Index of the all-ones intercept column, if present.
    pub fn intercept_column(&self) -> Option<usize> {
        (0..self.n_columns()).find(|&c| self.matrix.column(c).iter().all(|&v| v == 1.0))
    }
}

/// Assembles intercept, trend, weekend and predictor columns in that order.
pub fn build_design(panel: &AreaPanel, spec: &DesignSpec) -> Result<Design> {
    let (k, t) = (panel.n_units(), panel.n_times());
    let rows = k * t;
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    if spec.intercept {
        columns.push(("Intercept".into(), vec![1.0; rows]));
    }
    if let Trend::ScaledDay { divisor } = spec.trend {
        if !(divisor > 0.0) {
            return Err(Error::Config(format!("trend divisor {divisor} must be positive")));
        }
        let col = (0..rows).map(|r| (r / k + 1) as f64 / divisor).collect();
        columns.push(("Trend".into(), col));
    }
    if spec.weekend {
        let mut col = Vec::with_capacity(rows);
        for date in panel.dates() {
            let w = match date {
                PanelDate::Day(d) => weekend_indicator(*d) as f64,
                PanelDate::Year(_) => {
                    return Err(Error::Config("weekend indicator needs daily dates".into()))
                }
            };
            col.extend(std::iter::repeat_n(w, k));
        }
        columns.push(("Weekend".into(), col));
    }
    for name in &spec.predictors {
        columns.push((name.clone(), panel.expanded(name)?));
    }
    let start = usize::from(spec.intercept);
    for (name, col) in &columns[start..] {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(Error::ZeroVariance(name.clone()));
        }
    }
    Design::from_columns(k, t, columns)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// Exact (min, mean, median, max); the median of an even-length input is the
/// midpoint of the two central order statistics.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Dimension("summarize needs at least one value".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    };
    Ok(Summary {
        min: s[0],
        mean: s.iter().sum::<f64>() / n as f64,
        median,
        max: s[n - 1],
    })
}
