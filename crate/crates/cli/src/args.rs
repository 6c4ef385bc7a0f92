use std::path::{Path, PathBuf};

use areal::esda::WeightScheme;
use areal::eval::Criterion;
use areal::graph::ContiguityKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::draws::DrawsFormat;

#[derive(Debug, Parser)]
#[command(name = "areal", version, about = "Bayesian CAR models for areal panel data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a contiguity edge list (plus summary) from a GeoJSON polygon file.
    Adjacency(AdjacencyArgs),
    /// Aggregate trip and crime extracts and a community snapshot into panels.
    Ingest(IngestArgs),
    /// Correlations, Moran's I and choropleth data for panel variables.
    Esda(EsdaArgs),
    /// Fit the Leroux CAR regression to a single-slice panel.
    FitSpatial(FitSpatialArgs),
    /// Fit the spatio-temporal AR(2) CAR regression to a daily panel.
    FitSt(FitStArgs),
    /// Stepwise predictor selection by DIC or WAIC.
    Select(SelectArgs),
    /// Convergence diagnostics for a stored set of draws.
    Diagnose(DiagnoseArgs),
    /// Simulate a panel with known parameters.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Adjacency(_) => "adjacency",
            Command::Ingest(_) => "ingest",
            Command::Esda(_) => "esda",
            Command::FitSpatial(_) => "fit-spatial",
            Command::FitSt(_) => "fit-st",
            Command::Select(_) => "select",
            Command::Diagnose(_) => "diagnose",
            Command::Simulate(_) => "simulate",
        }
    }

    pub fn run_opts(&self) -> &RunOpts {
        match self {
            Command::Adjacency(a) => &a.run,
            Command::Ingest(a) => &a.run,
            Command::Esda(a) => &a.run,
            Command::FitSpatial(a) => &a.run,
            Command::FitSt(a) => &a.run,
            Command::Select(a) => &a.run,
            Command::Diagnose(a) => &a.run,
            Command::Simulate(a) => &a.run,
        }
    }
}

#[derive(Debug, Args)]
pub struct RunOpts {
    /// Directory receiving the outputs and the run manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML file of settings; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Upper bound on worker threads.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
}

#[derive(Debug, Args)]
pub struct GeometryOpts {
    /// Feature property holding the area id.
    #[arg(long)]
    pub id_key: Option<String>,
    /// Contiguity rule: queen or rook.
    #[arg(long)]
    pub contiguity: Option<ContiguityKind>,
    /// Distance under which boundary vertices count as shared.
    #[arg(long)]
    pub snap_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GraphOpts {
    /// Edge-list CSV written by `adjacency` (its JSON sidecar supplies the
    /// unit order), or a GeoJSON polygon file.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryOpts,
}

#[derive(Debug, Args)]
pub struct ModelOpts {
    /// Long-format panel CSV (`area_id,date,variable,value`).
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Response variable.
    #[arg(long)]
    pub response: Option<String>,
    /// Comma-separated predictors (default: every other panel variable).
    #[arg(long, value_delimiter = ',')]
    pub predictors: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct McmcOpts {
    /// Random seed; generated and recorded in the manifest when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Inverse-gamma shape of ν².
    #[arg(long)]
    pub a1: Option<f64>,
    /// Inverse-gamma scale of ν².
    #[arg(long)]
    pub b1: Option<f64>,
    /// Inverse-gamma shape of τ².
    #[arg(long)]
    pub a2: Option<f64>,
    /// Inverse-gamma scale of τ².
    #[arg(long)]
    pub b2: Option<f64>,
    /// Prior variance of each coefficient.
    #[arg(long)]
    pub beta_var: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AdjacencyArgs {
    /// GeoJSON FeatureCollection of polygons or multipolygons.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[command(flatten)]
    pub geometry: GeometryOpts,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Trip extract CSV.
    #[arg(long)]
    pub trips: Option<PathBuf>,
    /// Crime extract CSV.
    #[arg(long)]
    pub crimes: Option<PathBuf>,
    /// Community snapshot CSV, one row per area.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub snapshot_id_column: Option<String>,
    /// Calendar year to aggregate.
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long)]
    pub trip_timestamp_column: Option<String>,
    #[arg(long)]
    pub trip_area_column: Option<String>,
    #[arg(long)]
    pub crime_timestamp_column: Option<String>,
    #[arg(long)]
    pub crime_area_column: Option<String>,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct EsdaArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Single-slice panel CSV.
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Comma-separated variables (default: all non-constant ones).
    #[arg(long, value_delimiter = ',')]
    pub variables: Option<Vec<String>>,
    /// binary or row-standardized.
    #[arg(long)]
    pub weights_scheme: Option<WeightScheme>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct FitSpatialArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub mcmc: McmcOpts,
    /// Independent chains, run in parallel.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..))]
    pub chains: Option<u16>,
    #[arg(long)]
    pub draws_format: Option<DrawsFormat>,
    /// Weight scheme of the residual Moran test.
    #[arg(long)]
    pub weights_scheme: Option<WeightScheme>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PsiUpdateArg {
    Block,
    SingleSite,
}

#[derive(Debug, Args)]
pub struct FitStArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub mcmc: McmcOpts,
    /// Include the day trend column.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub trend: Option<bool>,
    /// Day index divisor of the trend column (30.44 gives a per-month effect).
    #[arg(long)]
    pub trend_divisor: Option<f64>,
    /// Include the weekend indicator column.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub weekend: Option<bool>,
    /// Random-effect update: block (whole slices) or single-site.
    #[arg(long)]
    pub psi_update: Option<PsiUpdateArg>,
    #[arg(long)]
    pub draws_format: Option<DrawsFormat>,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub mcmc: McmcOpts,
    /// dic or waic.
    #[arg(long)]
    pub criterion: Option<Criterion>,
    /// Minimum criterion decrease for a step.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Draw store written by fit-spatial or fit-st (CSV or binary).
    #[arg(long)]
    pub draws: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunOpts,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Regular lattice ROWSxCOLS with queen contiguity, used without --graph
    /// (default 7x11).
    #[arg(long)]
    pub lattice: Option<String>,
    /// Number of daily slices; more than one gives AR(2) effects.
    #[arg(long)]
    pub times: Option<usize>,
    /// Comma-separated coefficients, intercept first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    #[arg(long)]
    pub nu2: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho2: Option<f64>,
    /// Name of the simulated response in the panel.
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub run: RunOpts,
}

/// Settings read from `--config`. Keys mirror the flag names with
/// underscores; keys a subcommand does not use are ignored.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<u16>,
    pub graph: Option<PathBuf>,
    pub polygons: Option<PathBuf>,
    pub id_key: Option<String>,
    pub contiguity: Option<ContiguityKind>,
    pub snap_tolerance: Option<f64>,
    pub panel: Option<PathBuf>,
    pub response: Option<String>,
    pub predictors: Option<Vec<String>>,
    pub variables: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<u16>,
    pub a1: Option<f64>,
    pub b1: Option<f64>,
    pub a2: Option<f64>,
    pub b2: Option<f64>,
    pub beta_var: Option<f64>,
    pub draws_format: Option<DrawsFormat>,
    pub weights_scheme: Option<WeightScheme>,
    pub permutations: Option<usize>,
    pub criterion: Option<Criterion>,
    pub threshold: Option<f64>,
    pub trend: Option<bool>,
    pub trend_divisor: Option<f64>,
    pub weekend: Option<bool>,
    pub psi_update: Option<PsiUpdateArg>,
    pub trips: Option<PathBuf>,
    pub crimes: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub snapshot_id_column: Option<String>,
    pub year: Option<i32>,
    pub trip_timestamp_column: Option<String>,
    pub trip_area_column: Option<String>,
    pub crime_timestamp_column: Option<String>,
    pub crime_area_column: Option<String>,
    pub draws: Option<PathBuf>,
    pub lattice: Option<String>,
    pub times: Option<usize>,
    pub beta: Option<Vec<f64>>,
    pub nu2: Option<f64>,
    pub tau2: Option<f64>,
    pub rho: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> anyhow::Result<FileConfig> {
        toml::from_str(text).map_err(|e| crate::run::invalid(format!("config file {}: {e}", path.display())))
    }
}

/// Flag, else config value, else default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}
