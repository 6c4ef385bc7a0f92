use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use areal::esda::{pearson_matrix, permutation_pvalue, Alternative, MoranResult, WeightScheme};
use areal::eval::{
    parameter_table, residual_moran, stepwise_select, subset_seed, summarize_spatial, summarize_st, FitSummary,
    StepwiseOptions,
};
use areal::graph::{
    build_contiguity, read_edge_csv, read_geojson_polygons, read_graph_summary, write_edge_csv, ContiguityKind,
    ContiguityRule,
};
use areal::leroux::{fit_spatial, fit_spatial_chains, fitted_and_residuals, LerouxFit, McmcConfig, PriorSpec};
use areal::pipeline::{
    aggregate_events, apply_transform, build_design, read_event_csv, AggregatedCounts, AreaPanel, AreaTable,
    CalendarSpan, Design, DesignSpec, Granularity, PanelDate, TransformKind, TransformSpec, Trend, MEAN_MONTH_DAYS,
};
use areal::rng::label_seed;
use areal::st::{fit_quality, fit_st, PsiUpdate, StConfig, TemporalMode};
use areal::synth::{dataset_panel, generate_spatial_dataset, generate_st_dataset, SimScenario};
use areal::ArealGraph;
use serde_json::json;

use crate::args::*;
use crate::draws::{DrawTable, DrawsFormat};
use crate::run::{invalid, Run};

/// Community snapshot columns and their transforms.
pub const SNAPSHOT_VARIABLES: [(&str, TransformKind); 18] = [
    ("population", TransformKind::Log),
    ("household_size", TransformKind::None),
    ("median_income", TransformKind::Log),
    ("bachelor_grad", TransformKind::Logit),
    ("econ_active", TransformKind::Logit),
    ("median_age", TransformKind::None),
    ("no_vehicle", TransformKind::None),
    ("open_space", TransformKind::None),
    ("mixed_use", TransformKind::None),
    ("commercial_use", TransformKind::None),
    ("institutional_use", TransformKind::None),
    ("industrial_use", TransformKind::None),
    ("transit_low", TransformKind::None),
    ("transit_moderate", TransformKind::None),
    ("transit_high", TransformKind::None),
    ("walk_low", TransformKind::None),
    ("walk_moderate", TransformKind::None),
    ("walk_high", TransformKind::None),
];

const DEFAULT_ID_KEY: &str = "area_numbe";
const DEFAULT_RESPONSE: &str = "rideshares";
const DEFAULT_PERMUTATIONS: usize = 999;

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    flag.or_else(|| config.clone()).ok_or_else(|| invalid(format!("--{name} is required")))
}

fn write_csv_rows(w: &mut dyn Write, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    for row in rows {
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn write_choropleth(w: &mut dyn Write, ids: &[String], values: &[f64]) -> anyhow::Result<()> {
    write_csv_rows(w, &["area_id", "value"], ids.iter().zip(values).map(|(id, v)| vec![id.clone(), v.to_string()]))
}

fn write_moran_table(w: &mut dyn Write, rows: &[(String, MoranResult)]) -> anyhow::Result<()> {
    write_csv_rows(
        w,
        &["variable", "I", "expected", "p", "scheme"],
        rows.iter().map(|(name, m)| {
            vec![
                name.clone(),
                format!("{:.6}", m.statistic),
                format!("{:.6}", m.expected_null),
                format!("{:.4}", m.p_value),
                m.weight_scheme.to_string(),
            ]
        }),
    )
}

struct GraphSettings {
    id_key: String,
    contiguity: ContiguityKind,
    snap_tolerance: f64,
}

impl GraphSettings {
    fn resolve(opts: &GeometryOpts, cfg: &FileConfig) -> GraphSettings {
        let rule = ContiguityRule::default();
        GraphSettings {
            id_key: pick(opts.id_key.clone(), cfg.id_key.clone(), DEFAULT_ID_KEY.to_string()),
            contiguity: pick(opts.contiguity, cfg.contiguity, rule.kind),
            snap_tolerance: pick(opts.snap_tolerance, cfg.snap_tolerance, rule.snap_tolerance),
        }
    }

    fn rule(&self) -> ContiguityRule {
        ContiguityRule {
            kind: self.contiguity,
            snap_tolerance: self.snap_tolerance,
        }
    }

    fn json(&self) -> serde_json::Value {
        json!({"id_key": self.id_key, "contiguity": self.contiguity, "snap_tolerance": self.snap_tolerance})
    }
}

fn polygons_to_graph(run: &mut Run, path: &Path, settings: &GraphSettings) -> anyhow::Result<ArealGraph> {
    let polygons = run.read_input(path, |r| Ok(read_geojson_polygons(r, &settings.id_key)?))?;
    Ok(build_contiguity(&polygons, settings.rule())?)
}

/// Sidecar summary next to an edge list: `edges.csv` → `edges.json`.
fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Loads `--graph`: an edge-list CSV (with its sidecar if present) or GeoJSON.
fn load_graph(run: &mut Run, path: &Path, settings: &GraphSettings) -> anyhow::Result<ArealGraph> {
    if !path.exists() {
        return Err(invalid(format!("graph file {} does not exist", path.display())));
    }
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return polygons_to_graph(run, path, settings);
    }
    let side = sidecar(path);
    let ids = if side.exists() {
        Some(run.read_input(&side, |r| Ok(read_graph_summary(r)?))?.unit_ids)
    } else {
        log::warn!("no {} beside the edge list; islands cannot be recovered", side.display());
        None
    };
    let graph = run.read_input(path, |r| Ok(read_edge_csv(r, ids.as_deref())?))?;
    Ok(graph)
}

struct GraphSource {
    path: PathBuf,
    settings: GraphSettings,
}

impl GraphSource {
    fn resolve(opts: &GraphOpts, cfg: &FileConfig) -> anyhow::Result<GraphSource> {
        Ok(GraphSource {
            path: required(opts.graph.clone(), &cfg.graph, "graph")?,
            settings: GraphSettings::resolve(&opts.geometry, cfg),
        })
    }

    fn load(&self, run: &mut Run) -> anyhow::Result<ArealGraph> {
        load_graph(run, &self.path, &self.settings)
    }

    fn json(&self) -> serde_json::Value {
        let mut v = self.settings.json();
        v["graph"] = json!(self.path);
        v
    }
}

fn load_panel(run: &mut Run, path: &Path, graph: &ArealGraph) -> anyhow::Result<AreaPanel> {
    let panel = run.read_input(path, |r| Ok(AreaPanel::read_long_csv(r)?))?;
    Ok(panel.align_to(graph)?)
}

struct ModelSettings {
    panel: PathBuf,
    response: String,
    predictors: Vec<String>,
}

impl ModelSettings {
    fn resolve(opts: &ModelOpts, cfg: &FileConfig) -> anyhow::Result<ModelSettings> {
        Ok(ModelSettings {
            panel: required(opts.panel.clone(), &cfg.panel, "panel")?,
            response: pick(opts.response.clone(), cfg.response.clone(), DEFAULT_RESPONSE.to_string()),
            predictors: opts.predictors.clone().or_else(|| cfg.predictors.clone()).unwrap_or_default(),
        })
    }

    /// Fills empty predictors with every non-response panel variable.
    fn complete(&mut self, panel: &AreaPanel) -> anyhow::Result<()> {
        panel.variable(&self.response)?;
        if self.predictors.is_empty() {
            self.predictors = panel.variable_names().filter(|n| *n != self.response).map(str::to_string).collect();
        }
        if self.predictors.contains(&self.response) {
            return Err(invalid(format!("response `{}` is also listed as a predictor", self.response)));
        }
        for p in &self.predictors {
            panel.variable(p)?;
        }
        Ok(())
    }

    fn json(&self) -> serde_json::Value {
        json!({"panel": self.panel, "response": self.response, "predictors": self.predictors})
    }
}

fn mcmc_settings(
    run: &mut Run,
    opts: &McmcOpts,
    cfg: &FileConfig,
    defaults: &McmcConfig,
) -> anyhow::Result<(McmcConfig, PriorSpec)> {
    let seed = run.seed(opts.seed.or(cfg.seed));
    let mcmc = McmcConfig {
        n_iterations: pick(opts.iterations, cfg.iterations, defaults.n_iterations),
        burn_in: pick(opts.burn_in, cfg.burn_in, defaults.burn_in),
        thin: pick(opts.thin, cfg.thin, defaults.thin),
        seed,
        ..defaults.clone()
    };
    let d = PriorSpec::default();
    let prior = PriorSpec {
        a1: pick(opts.a1, cfg.a1, d.a1),
        b1: pick(opts.b1, cfg.b1, d.b1),
        a2: pick(opts.a2, cfg.a2, d.a2),
        b2: pick(opts.b2, cfg.b2, d.b2),
        beta_mean: d.beta_mean,
        beta_var: pick(opts.beta_var, cfg.beta_var, d.beta_var),
    };
    Ok((mcmc, prior))
}

fn validate_mcmc(mcmc: &McmcConfig, prior: &PriorSpec) -> anyhow::Result<()> {
    mcmc.validate()?;
    prior.expand(1).validate(1)?;
    Ok(())
}

fn single_slice(panel: &AreaPanel, command: &str) -> anyhow::Result<()> {
    if panel.n_times() != 1 {
        return Err(invalid(format!(
            "{command} needs a single-slice panel, got {} dates (use the totals panel)",
            panel.n_times()
        )));
    }
    Ok(())
}

fn permutations(flag: Option<usize>, cfg: &FileConfig) -> anyhow::Result<usize> {
    let n = pick(flag, cfg.permutations, DEFAULT_PERMUTATIONS);
    if n < 99 {
        return Err(invalid(format!("--permutations must be at least 99, got {n}")));
    }
    Ok(n)
}

fn stage_summary(run: &mut Run, summary: &FitSummary) -> anyhow::Result<()> {
    run.stage("summary.csv", |w| Ok(summary.write_csv(w)?))?;
    run.stage("diagnostics.csv", |w| Ok(summary.write_diagnostics_csv(w)?))?;
    run.stage("criteria.csv", |w| Ok(summary.write_criteria_csv(w)?))
}

fn stage_draws(run: &mut Run, table: &DrawTable, format: DrawsFormat) -> anyhow::Result<()> {
    run.stage(format.file_name(), |w| table.write(format, w))
}

pub fn adjacency(args: &AdjacencyArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let path = required(args.polygons.clone(), &cfg.polygons, "polygons")?;
    let settings = GraphSettings::resolve(&args.geometry, cfg);
    let mut config = settings.json();
    config["polygons"] = json!(path);
    run.set_config(&config)?;
    let graph = polygons_to_graph(run, &path, &settings)?;
    let summary = graph.summary();
    if !summary.islands.is_empty() {
        log::warn!("{} island(s): {:?}", summary.islands.len(), summary.islands);
    }
    run.stage("adjacency.csv", |w| Ok(write_edge_csv(&graph, w)?))?;
    run.stage("adjacency.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Streams one event extract into daily counts.
fn count_events(
    run: &mut Run,
    path: &Path,
    timestamp_column: &str,
    area_column: &str,
    unit_ids: &[String],
    year: i32,
) -> anyhow::Result<AggregatedCounts> {
    run.read_input(path, |r| {
        let mut failure = None;
        let records = read_event_csv(r, timestamp_column, area_column)?.map_while(|rec| match rec {
            Ok(pair) => Some(pair),
            Err(e) => {
                failure = Some(e);
                None
            }
        });
        let counts = aggregate_events(records, unit_ids, Granularity::Daily, CalendarSpan::year(year))?;
        match failure {
            Some(e) => Err(e.into()),
            None => Ok(counts),
        }
    })
}

fn totals_of(daily: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k];
    for (i, v) in daily.iter().enumerate() {
        out[i % k] += v;
    }
    out
}

pub fn ingest(args: &IngestArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let trips = required(args.trips.clone(), &cfg.trips, "trips")?;
    let crimes = args.crimes.clone().or_else(|| cfg.crimes.clone());
    let snapshot = args.snapshot.clone().or_else(|| cfg.snapshot.clone());
    let year = pick(args.year, cfg.year, 2022);
    let trip_ts = pick(args.trip_timestamp_column.clone(), cfg.trip_timestamp_column.clone(), "Trip Start Timestamp".into());
    let trip_area =
        pick(args.trip_area_column.clone(), cfg.trip_area_column.clone(), "Pickup Community Area".into());
    let crime_ts = pick(args.crime_timestamp_column.clone(), cfg.crime_timestamp_column.clone(), "Date".into());
    let crime_area = pick(args.crime_area_column.clone(), cfg.crime_area_column.clone(), "Community Area".into());
    let snapshot_id = pick(args.snapshot_id_column.clone(), cfg.snapshot_id_column.clone(), "area_id".into());
    let source = GraphSource::resolve(&args.graph, cfg)?;
    run.set_config(&json!({
        "graph": source.json(), "trips": trips, "crimes": crimes, "snapshot": snapshot, "year": year,
        "trip_timestamp_column": trip_ts, "trip_area_column": trip_area,
        "crime_timestamp_column": crime_ts, "crime_area_column": crime_area,
        "snapshot_id_column": snapshot_id,
    }))?;
    if !(1..=9999).contains(&year) {
        return Err(invalid(format!("--year {year} is out of range")));
    }
    let graph = source.load(run)?;
    let ids = graph.unit_ids().to_vec();
    let k = ids.len();
    let table = match &snapshot {
        Some(p) => Some(run.read_input(p, |r| Ok(AreaTable::read_csv(r, &snapshot_id)?))?),
        None => None,
    };

    let span = CalendarSpan::year(year);
    let days: Vec<PanelDate> = span.dates().into_iter().map(PanelDate::Day).collect();
    let mut totals = AreaPanel::new(ids.clone(), vec![PanelDate::Year(year)])?;
    let mut daily = AreaPanel::new(ids.clone(), days)?;
    let mut report = serde_json::Map::new();
    let mut events: Vec<(&str, &Path, &str, &str)> = vec![("rideshares", &trips, &trip_ts, &trip_area)];
    if let Some(c) = &crimes {
        events.push(("crimes", c, &crime_ts, &crime_area));
    }
    for (name, path, ts, area) in events {
        let counts = count_events(run, path, ts, area, &ids, year)?;
        let total = totals_of(&counts.values, k);
        let log = TransformSpec::new(TransformKind::Log);
        totals.insert(name, apply_transform(name, &total, log)?, TransformKind::Log)?;
        let log1p = TransformSpec::new(TransformKind::Log1p);
        daily.insert(name, apply_transform(name, &counts.values, log1p)?, TransformKind::Log1p)?;
        report.insert(name.to_string(), serde_json::to_value(&counts.report)?);
    }
    if let Some(table) = &table {
        for h in &table.headers {
            if *h != snapshot_id && !SNAPSHOT_VARIABLES.iter().any(|(n, _)| n == h) {
                log::warn!("snapshot column `{h}` is not a known variable; ignored");
            }
        }
        for (name, kind) in SNAPSHOT_VARIABLES {
            if !table.headers.iter().any(|h| h == name) {
                continue;
            }
            let values = apply_transform(name, &table.column(name, &ids)?, TransformSpec::new(kind))?;
            totals.insert(name, values.clone(), kind)?;
            daily.insert(name, values, kind)?;
        }
    }
    run.stage("totals.csv", |w| Ok(totals.write_long_csv(w)?))?;
    run.stage("daily.csv", |w| Ok(daily.write_long_csv(w)?))?;
    run.stage("ingest_report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        writeln!(w)?;
        Ok(())
    })
}

pub fn esda(args: &EsdaArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let panel_path = required(args.panel.clone(), &cfg.panel, "panel")?;
    let scheme = pick(args.weights_scheme, cfg.weights_scheme, WeightScheme::RowStandardized);
    let n_perm = permutations(args.permutations, cfg)?;
    let seed = run.seed(args.seed.or(cfg.seed));
    let requested = args.variables.clone().or_else(|| cfg.variables.clone());
    let source = GraphSource::resolve(&args.graph, cfg)?;
    let config = |variables: &Option<Vec<String>>| {
        json!({
            "graph": source.json(), "panel": panel_path, "variables": variables, "weights_scheme": scheme,
            "permutations": n_perm, "seed": seed,
        })
    };
    run.set_config(&config(&requested))?;
    let graph = source.load(run)?;
    let panel = load_panel(run, &panel_path, &graph)?;
    single_slice(&panel, "esda")?;
    let variables: Vec<String> = match &requested {
        Some(v) => v.clone(),
        None => panel
            .variable_names()
            .filter(|name| {
                let v = &panel.variable(name).expect("listed").values;
                let constant = v.iter().all(|x| *x == v[0]);
                if constant {
                    log::warn!("skipping constant variable `{name}`");
                }
                !constant
            })
            .map(str::to_string)
            .collect(),
    };
    run.set_config(&config(&Some(variables.clone())))?;
    if variables.is_empty() {
        return Err(invalid("no variables to analyse"));
    }
    let columns: Vec<(String, Vec<f64>)> =
        variables.iter().map(|v| Ok((v.clone(), panel.expanded(v)?))).collect::<anyhow::Result<_>>()?;

    let r = pearson_matrix(&columns)?;
    let morans: Vec<(String, MoranResult)> = columns
        .iter()
        .map(|(name, v)| {
            let m = permutation_pvalue(v, &graph, scheme, n_perm, label_seed(seed, name), Alternative::Greater)?;
            Ok((name.clone(), m))
        })
        .collect::<anyhow::Result<_>>()?;

    run.stage("correlation.csv", |w| {
        let mut header = vec!["variable"];
        header.extend(variables.iter().map(String::as_str));
        write_csv_rows(
            w,
            &header,
            variables.iter().enumerate().map(|(i, name)| {
                std::iter::once(name.clone()).chain((0..variables.len()).map(|j| format!("{:.6}", r[(i, j)]))).collect()
            }),
        )
    })?;
    run.stage("moran.csv", |w| write_moran_table(w, &morans))?;
    for (name, values) in &columns {
        run.stage(&format!("choropleth_{name}.csv"), |w| write_choropleth(w, graph.unit_ids(), values))?;
    }
    Ok(())
}

/// Posterior-mean fitted values and effects pooled over equally long chains.
fn pooled_fit(chains: &[LerouxFit], y: &[f64], design: &Design) -> anyhow::Result<(Vec<f64>, Vec<f64>)> {
    let n = chains.len() as f64;
    let mut fitted = vec![0.0; y.len()];
    let mut effects = vec![0.0; y.len()];
    for c in chains {
        let (f, _) = fitted_and_residuals(c, y, &design.matrix)?;
        for (acc, v) in fitted.iter_mut().zip(f) {
            *acc += v / n;
        }
        for (acc, v) in effects.iter_mut().zip(c.phi_mean()) {
            *acc += v / n;
        }
    }
    Ok((fitted, effects))
}

pub fn fit_spatial_cmd(args: &FitSpatialArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let mut model = ModelSettings::resolve(&args.model, cfg)?;
    let (mcmc, prior) = mcmc_settings(run, &args.mcmc, cfg, &McmcConfig::default())?;
    let n_chains = pick(args.chains, cfg.chains, 4) as usize;
    if n_chains == 0 {
        return Err(invalid("--chains must be at least 1"));
    }
    let format = pick(args.draws_format, cfg.draws_format, DrawsFormat::Csv);
    let scheme = pick(args.weights_scheme, cfg.weights_scheme, WeightScheme::RowStandardized);
    let n_perm = permutations(args.permutations, cfg)?;
    let source = GraphSource::resolve(&args.graph, cfg)?;
    let config = |model: &ModelSettings| {
        json!({
            "graph": source.json(), "model": model.json(), "mcmc": mcmc, "prior": prior, "chains": n_chains,
            "draws_format": format, "weights_scheme": scheme, "permutations": n_perm,
        })
    };
    run.set_config(&config(&model))?;
    validate_mcmc(&mcmc, &prior)?;
    let graph = source.load(run)?;
    let panel = load_panel(run, &model.panel, &graph)?;
    single_slice(&panel, "fit-spatial")?;
    model.complete(&panel)?;
    run.set_config(&config(&model))?;
    let names: Vec<&str> = model.predictors.iter().map(String::as_str).collect();
    let design = build_design(&panel, &DesignSpec::spatial(&names))?;
    let y = panel.expanded(&model.response)?;
    let hyper = prior.expand(design.n_columns());

    let chains = fit_spatial_chains(&y, &design, &graph, &hyper, &mcmc, n_chains)?;
    for c in &chains {
        log::info!("chain {}: rho acceptance {:.3}", c.chain, c.rho_acceptance);
    }
    let summary = summarize_spatial(&chains, &y, &design.matrix)?;
    let (fitted, effects) = pooled_fit(&chains, &y, &design)?;
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
    let moran = residual_moran(&resid, &graph, scheme, n_perm, mcmc.seed)?;
    let draws = DrawTable::from_chains(&chains.iter().map(|c| c.parameter_draws()).collect::<Vec<_>>());

    stage_summary(run, &summary)?;
    stage_draws(run, &draws, format)?;
    run.stage("residuals.csv", |w| write_choropleth(w, graph.unit_ids(), &resid))?;
    run.stage("effects.csv", |w| write_choropleth(w, graph.unit_ids(), &effects))?;
    run.stage("residual_moran.csv", |w| write_moran_table(w, &[("residual".into(), moran)]))
}

pub fn fit_st_cmd(args: &FitStArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let mut model = ModelSettings::resolve(&args.model, cfg)?;
    let defaults = StConfig::default();
    let (mcmc, prior) = mcmc_settings(run, &args.mcmc, cfg, &defaults.mcmc)?;
    let trend = pick(args.trend, cfg.trend, true);
    let divisor = pick(args.trend_divisor, cfg.trend_divisor, MEAN_MONTH_DAYS);
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(invalid(format!("--trend-divisor must be positive, got {divisor}")));
    }
    let weekend = pick(args.weekend, cfg.weekend, true);
    let psi_update = match pick(args.psi_update, cfg.psi_update, PsiUpdateArg::Block) {
        PsiUpdateArg::Block => PsiUpdate::Block,
        PsiUpdateArg::SingleSite => PsiUpdate::SingleSite,
    };
    let format = pick(args.draws_format, cfg.draws_format, DrawsFormat::Csv);
    let source = GraphSource::resolve(&args.graph, cfg)?;
    let config = StConfig {
        mcmc,
        psi_update,
        temporal: TemporalMode::Sample,
        ..defaults
    };
    let snapshot = |model: &ModelSettings| {
        let trend = if trend { Trend::ScaledDay { divisor } } else { Trend::None };
        json!({
            "graph": source.json(), "model": model.json(), "trend": trend, "weekend": weekend, "st": config,
            "prior": prior, "draws_format": format,
        })
    };
    run.set_config(&snapshot(&model))?;
    validate_mcmc(&config.mcmc, &prior)?;
    let graph = source.load(run)?;
    let panel = load_panel(run, &model.panel, &graph)?;
    model.complete(&panel)?;
    run.set_config(&snapshot(&model))?;
    let spec = DesignSpec {
        predictors: model.predictors.clone(),
        trend: if trend { Trend::ScaledDay { divisor } } else { Trend::None },
        weekend,
        intercept: true,
    };
    let design = build_design(&panel, &spec)?;
    let y = panel.expanded(&model.response)?;
    let hyper = prior.expand(design.n_columns());

    let fit = fit_st(&y, &design, &graph, &hyper, &config)?;
    log::info!(
        "rho acceptance {:.3}; {} temporal updates fell back to Metropolis",
        fit.rho_acceptance,
        fit.temporal_fallbacks
    );
    let summary = summarize_st(&fit, &y, &design.matrix)?;
    let fitted = fit.fitted_mean(&design.matrix);
    let (r, slope) = fit_quality(&fitted, &y)?;
    let k = graph.len();
    let effects: Vec<f64> =
        (0..k).map(|i| fit.psi_mean.iter().skip(i).step_by(k).sum::<f64>() / fit.n_times as f64).collect();
    let draws = DrawTable::from_chains(&[fit.parameter_draws()]);

    stage_summary(run, &summary)?;
    stage_draws(run, &draws, format)?;
    run.stage("scatter.csv", |w| {
        write_csv_rows(w, &["actual", "fitted"], y.iter().zip(&fitted).map(|(a, f)| vec![a.to_string(), f.to_string()]))
    })?;
    run.stage("effects.csv", |w| write_choropleth(w, graph.unit_ids(), &effects))?;
    run.stage("fit_quality.csv", |w| {
        write_csv_rows(
            w,
            &["metric", "value"],
            [vec!["r".into(), format!("{r:.6}")], vec!["slope".into(), format!("{slope:.6}")]],
        )
    })
}

pub fn select(args: &SelectArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let mut model = ModelSettings::resolve(&args.model, cfg)?;
    let (mcmc, prior) = mcmc_settings(run, &args.mcmc, cfg, &McmcConfig::default())?;
    let d = StepwiseOptions::default();
    let options = StepwiseOptions {
        criterion: pick(args.criterion, cfg.criterion, d.criterion),
        threshold: pick(args.threshold, cfg.threshold, d.threshold),
    };
    if !(options.threshold >= 0.0) {
        return Err(invalid(format!("--threshold must be non-negative, got {}", options.threshold)));
    }
    let source = GraphSource::resolve(&args.graph, cfg)?;
    let config = |model: &ModelSettings| {
        json!({"graph": source.json(), "model": model.json(), "mcmc": mcmc, "prior": prior, "stepwise": options})
    };
    run.set_config(&config(&model))?;
    validate_mcmc(&mcmc, &prior)?;
    let graph = source.load(run)?;
    let panel = load_panel(run, &model.panel, &graph)?;
    single_slice(&panel, "select")?;
    model.complete(&panel)?;
    run.set_config(&config(&model))?;
    let y = panel.expanded(&model.response)?;
    let candidates: Vec<(String, Vec<f64>)> =
        model.predictors.iter().map(|p| Ok((p.clone(), panel.expanded(p)?))).collect::<anyhow::Result<_>>()?;

    let selection = stepwise_select(&y, &candidates, &graph, &prior, &mcmc, &options)?;
    log::info!("selected {:?}", selection.chosen);
    // refit the chosen subset exactly as the search scored it
    let mut cols = vec![("Intercept".to_string(), vec![1.0; y.len()])];
    cols.extend(candidates.iter().filter(|(n, _)| selection.chosen.contains(n)).cloned());
    let design = Design::from_columns(y.len(), 1, cols)?;
    let config = McmcConfig {
        seed: subset_seed(mcmc.seed, &selection.chosen),
        ..mcmc
    };
    let fit = fit_spatial(&y, &design, &graph, &prior.expand(design.n_columns()), &config)?;
    let summary = summarize_spatial(std::slice::from_ref(&fit), &y, &design.matrix)?;

    run.stage("step_trace.csv", |w| Ok(selection.write_trace_csv(w)?))?;
    stage_summary(run, &summary)
}

pub fn diagnose(args: &DiagnoseArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let path = required(args.draws.clone(), &cfg.draws, "draws")?;
    run.set_config(&json!({"draws": path}))?;
    let table = run
        .read_input(&path, |r| DrawTable::read(r))
        .map_err(|e| invalid(format!("{e:#}")))?;
    let traces = table.chain_traces();
    let params: Vec<(String, Vec<&[f64]>)> = traces
        .iter()
        .map(|(name, chains)| (name.clone(), chains.iter().map(Vec::as_slice).collect()))
        .collect();
    let summary = FitSummary {
        dic: f64::NAN,
        p_d: f64::NAN,
        waic: f64::NAN,
        p_waic: f64::NAN,
        parameters: parameter_table(&params),
    };
    for p in summary.parameters.iter().filter(|p| p.rhat > 1.1 || p.geweke_z.abs() > 3.0) {
        log::warn!("`{}` may not have converged (R-hat {:.3}, Geweke z {:.2})", p.name, p.rhat, p.geweke_z);
    }
    run.stage("diagnostics.csv", |w| Ok(summary.write_diagnostics_csv(w)?))
}

fn parse_lattice(s: &str) -> anyhow::Result<(usize, usize)> {
    let bad = || invalid(format!("--lattice expects ROWSxCOLS, got `{s}`"));
    let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (r, c): (usize, usize) = (r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok((r, c))
}

pub fn simulate(args: &SimulateArgs, cfg: &FileConfig, run: &mut Run) -> anyhow::Result<()> {
    let d = SimScenario::default();
    let seed = run.seed(args.seed.or(cfg.seed));
    let scenario = SimScenario {
        beta: pick(args.beta.clone(), cfg.beta.clone(), d.beta),
        nu2: pick(args.nu2, cfg.nu2, d.nu2),
        tau2: pick(args.tau2, cfg.tau2, d.tau2),
        rho: pick(args.rho, cfg.rho, d.rho),
        rho1: pick(args.rho1, cfg.rho1, d.rho1),
        rho2: pick(args.rho2, cfg.rho2, d.rho2),
        n_times: pick(args.times, cfg.times, d.n_times),
        seed,
    };
    let response = pick(args.response.clone(), cfg.response.clone(), DEFAULT_RESPONSE.to_string());
    let graph_path = args.graph.graph.clone().or_else(|| cfg.graph.clone());
    let lattice = pick(args.lattice.clone(), cfg.lattice.clone(), "7x11".to_string());
    let graph_cfg = match &graph_path {
        Some(_) => GraphSource::resolve(&args.graph, cfg)?.json(),
        None => json!({"lattice": lattice}),
    };
    run.set_config(&json!({"graph": graph_cfg, "scenario": scenario, "response": response}))?;
    scenario.validate()?;
    let (graph, from_lattice) = match &graph_path {
        Some(_) => (GraphSource::resolve(&args.graph, cfg)?.load(run)?, false),
        None => {
            let (rows, cols) = parse_lattice(&lattice)?;
            (ArealGraph::lattice(rows, cols, ContiguityKind::Queen), true)
        }
    };

    let (panel, truth) = if scenario.n_times == 1 {
        let data = generate_spatial_dataset(&graph, &scenario)?;
        (dataset_panel(&graph, &data.y, &data.design, &response)?, serde_json::to_value(&data.truth)?)
    } else {
        let data = generate_st_dataset(&graph, &scenario)?;
        (dataset_panel(&graph, &data.y, &data.design, &response)?, serde_json::to_value(&data.truth)?)
    };
    run.stage("panel.csv", |w| Ok(panel.write_long_csv(w)?))?;
    run.stage("truth.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &json!({"scenario": scenario, "truth": truth}))?;
        writeln!(w)?;
        Ok(())
    })?;
    if from_lattice {
        run.stage("adjacency.csv", |w| Ok(write_edge_csv(&graph, w)?))?;
        run.stage("adjacency.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &graph.summary())?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

/// Reads `--config` when given.
pub fn load_config(path: Option<&Path>, run: &mut Run) -> anyhow::Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = run.read_input(path, |r| {
        let mut s = String::new();
        r.read_to_string(&mut s).context("config file is not UTF-8")?;
        Ok(s)
    })?;
    FileConfig::parse(&text, path)
}
