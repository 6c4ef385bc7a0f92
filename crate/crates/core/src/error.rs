use thiserror::Error;

/// Errors raised by the areal modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate area id `{0}`")]
    DuplicateId(String),

    #[error("degenerate polygon for area `{0}`: no vertices")]
    DegeneratePolygon(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("symmetric eigen-decomposition failed for a {0}x{0} matrix")]
    EigenFailure(usize),

    #[error("factorization failed (K = {k}, rho = {rho}): {reason}")]
    Factorization { k: usize, rho: f64, reason: String },

    #[error("transform domain violation in `{variable}` at index {index}: value {value} ({reason})")]
    Domain {
        variable: String,
        index: usize,
        value: f64,
        reason: &'static str,
    },

    #[error("too many unparseable timestamps: {skipped} of {total} rows skipped")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("zero-variance column `{0}`")]
    ZeroVariance(String),

    #[error("design matrix is rank deficient; offending columns: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("constant input: {0}")]
    ConstantInput(String),

    #[error("graph has no edges")]
    EdgelessGraph,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid panel: {0}")]
    Panel(String),

    #[error("AR(2) coefficients ({rho1}, {rho2}) lie outside the stationarity triangle")]
    NonStationary { rho1: f64, rho2: f64 },

    #[error("non-identifiable temporal coefficients: {0}")]
    NonIdentifiable(String),

    #[error("sampler diverged at iteration {iteration}: `{parameter}` is not finite")]
    Divergence { iteration: usize, parameter: String },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("model fit failed for subset {subset:?}: {source}")]
    SubsetFit {
        subset: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
