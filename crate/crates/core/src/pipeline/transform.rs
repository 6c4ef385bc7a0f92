use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    #[default]
    None,
    Log,
    Log1p,
    Logit,
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "identity" => Ok(TransformKind::None),
            "log" => Ok(TransformKind::Log),
            "log1p" => Ok(TransformKind::Log1p),
            "logit" => Ok(TransformKind::Logit),
            other => Err(Error::Config(format!("unknown transform `{other}`"))),
        }
    }
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransformKind::None => "none",
            TransformKind::Log => "log",
            TransformKind::Log1p => "log1p",
            TransformKind::Logit => "logit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    /// Logit inputs are clamped into (ε, 1 − ε).
    pub clamp_epsilon: f64,
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        TransformSpec { kind, clamp_epsilon: 1e-6 }
    }
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec::new(TransformKind::None)
    }
}

/// Applies `spec` elementwise. `variable` only labels domain errors.
pub fn apply_transform(variable: &str, values: &[f64], spec: TransformSpec) -> Result<Vec<f64>> {
    let eps = spec.clamp_epsilon;
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Config(format!("clamp_epsilon {eps} outside (0, 0.5)")));
    }
    let fail = |index: usize, value: f64, reason: &'static str| Error::Domain {
        variable: variable.to_string(),
        index,
        value,
        reason,
    };
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !v.is_finite() {
                return Err(fail(i, v, "value is not finite"));
            }
            match spec.kind {
                TransformKind::None => Ok(v),
                TransformKind::Log if v > 0.0 => Ok(v.ln()),
                TransformKind::Log => Err(fail(i, v, "log requires values > 0")),
                TransformKind::Log1p if v >= 0.0 => Ok(v.ln_1p()),
                TransformKind::Log1p => Err(fail(i, v, "log1p requires values >= 0")),
                TransformKind::Logit if (0.0..=1.0).contains(&v) => {
                    let p = v.clamp(eps, 1.0 - eps);
                    Ok((p / (1.0 - p)).ln())
                }
                TransformKind::Logit => Err(fail(i, v, "logit requires values in [0, 1]")),
            }
        })
        .collect()
}

/// Analytic inverse of [`apply_transform`] (clamping is not undone).
pub fn invert_transform(values: &[f64], kind: TransformKind) -> Vec<f64> {
    values
        .iter()
        .map(|&v| match kind {
            TransformKind::None => v,
            TransformKind::Log => v.exp(),
            TransformKind::Log1p => v.exp_m1(),
            TransformKind::Logit => 1.0 / (1.0 + (-v).exp()),
        })
        .collect()
}
