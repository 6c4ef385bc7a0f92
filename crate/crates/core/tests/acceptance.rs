//! Acceptance suite. Runs every criterion and prints one line per criterion;
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p areal-core --test acceptance -- 3 5`.

mod oracles;

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use areal::esda::{morans_i, WeightScheme};
use areal::eval::{
    dic, effective_sample_size, residual_moran, summarize_spatial, summarize_st, waic, waic_store,
};
use areal::graph::{build_contiguity, read_geojson_polygons, ArealGraph, ContiguityKind, ContiguityRule};
use areal::leroux::{
    fit_spatial, fit_spatial_chains, fitted_and_residuals, Hyperpriors, LerouxSampler, LerouxState,
    McmcConfig, PriorSpec, SpatialCache,
};
use areal::loglik::PointwiseLogLik;
use areal::pipeline::{build_design, summarize, AreaPanel, Design, DesignSpec, Trend, MEAN_MONTH_DAYS};
use areal::rng::{fisher_yates, inverse_gamma, open_unit, std_normal, std_normal_vec, stream_rng, SimRng};
use areal::st::{
    fit_quality, fit_st, psi_block_update, psi_conditional_moments, st_effect_logdensity, PsiUpdate, StConfig,
    StState, TemporalMode,
};
use areal::stats::{pearson, quantile};
use areal::synth::{generate_spatial_dataset, generate_st_dataset, sample_car_field, CarFieldSampler, SimScenario};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<Outcome, Box<dyn std::error::Error>>;

fn verdict(pass: bool, detail: String) -> Outcome {
    if pass {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria = [
        Criterion { id: 1, name: "moran oracle", limit: secs(5), run: moran_oracle },
        Criterion { id: 2, name: "car field oracle", limit: secs(60), run: car_field_oracle },
        Criterion { id: 3, name: "conjugate collapse", limit: secs(30), run: conjugate_collapse },
        Criterion { id: 4, name: "getting it right", limit: secs(300), run: getting_it_right },
        Criterion { id: 5, name: "recovery and calibration", limit: secs(1800), run: recovery_and_sbc },
        Criterion { id: 6, name: "st density oracle", limit: secs(30), run: st_density_oracle },
        Criterion { id: 7, name: "model identity", limit: secs(600), run: model_identity },
        Criterion { id: 8, name: "dic/waic oracles", limit: None, run: criteria_oracles },
        Criterion { id: 9, name: "determinism", limit: None, run: determinism },
        Criterion { id: 10, name: "chicago replication", limit: None, run: chicago },
        Criterion { id: 11, name: "performance", limit: None, run: performance },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();

    let mut failures = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = match (c.run)() {
            Ok(o) => o,
            Err(e) => Outcome::Fail(format!("error: {e}")),
        };
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Outcome::Pass(d), Some(limit)) if elapsed > limit => {
                Outcome::Fail(format!("{d}; took {elapsed:.1?}, limit {limit:?}"))
            }
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failures += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} [{:>2}] {} ({:.1?}): {detail}", c.id, c.name, elapsed);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn queen(rows: usize, cols: usize) -> ArealGraph {
    ArealGraph::lattice(rows, cols, ContiguityKind::Queen)
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

fn interval(draws: &[f64]) -> (f64, f64) {
    (quantile(draws, 0.025), quantile(draws, 0.975))
}

/// z statistic for equality of two chain means with ESS-based standard errors.
fn mean_z(a: &[f64], b: &[f64]) -> Result<f64, Box<dyn std::error::Error>> {
    let ess_a = effective_sample_size(&[a]).ok_or("degenerate chain")?;
    let ess_b = effective_sample_size(&[b]).ok_or("degenerate chain")?;
    let se = (oracles::var(a) / ess_a + oracles::var(b) / ess_b).sqrt();
    Ok((oracles::mean(a) - oracles::mean(b)) / se)
}

fn moran_oracle() -> Check {
    let mut rng = stream_rng(101, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=50);
        let p = rng.random_range(0.05..0.6);
        let graph = oracles::random_graph(&mut rng, k, p);
        let values = std_normal_vec(&mut rng, k);
        let fast = morans_i(&values, &graph, WeightScheme::Binary)?;
        let slow = oracles::brute_force_moran(&values, &graph.dense_adjacency());
        worst = worst.max((fast - slow).abs());
    }
    let ids = (0..4).map(|i| i.to_string()).collect();
    let cycle = ArealGraph::from_edges(ids, &[(0, 1), (1, 2), (2, 3), (0, 3)])?;
    let alternating = morans_i(&[1.0, -1.0, 1.0, -1.0], &cycle, WeightScheme::Binary)?;
    Ok(verdict(
        worst <= 1e-12 && alternating == -1.0,
        format!("max |I - double sum| = {worst:.1e} over 100 graphs; 4-cycle I = {alternating}"),
    ))
}

fn car_field_oracle() -> Check {
    let graph = queen(2, 5);
    let (tau2, n) = (0.5, 200_000);
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, rho) in [0.0, 0.5, 0.9].into_iter().enumerate() {
        let mut second = DMatrix::<f64>::zeros(10, 10);
        for d in 0..n {
            let x = DVector::from_vec(sample_car_field(&graph, rho, tau2, (i * n + d) as u64)?);
            second.ger(1.0, &x, &x, 1.0);
        }
        let precision = (second / n as f64).try_inverse().ok_or("singular sample covariance")?;
        let target = oracles::dense_leroux(&graph, rho) / tau2;
        let err = (&precision - &target).norm() / target.norm();
        pass &= err < 0.05;
        parts.push(format!("rho {rho}: {:.2}%", 100.0 * err));
    }
    Ok(verdict(pass, format!("relative Frobenius error {}", parts.join(", "))))
}

fn conjugate_collapse() -> Check {
    let graph = queen(7, 11);
    let scenario = SimScenario { tau2: 0.0, seed: 21, ..SimScenario::default() };
    let data = generate_spatial_dataset(&graph, &scenario)?;
    let prior = PriorSpec { a2: 1e6, b2: 1e-6, ..PriorSpec::default() };
    let p = data.design.n_columns();
    let config = McmcConfig { seed: 3, ..McmcConfig::default() };
    let chains = fit_spatial_chains(&data.y, &data.design, &graph, &prior.expand(p), &config, 4)?;

    // β | y is multivariate t under a flat β prior and ν² ~ IG(a1, b1).
    let x = &data.design.matrix;
    let y = DVector::from_column_slice(&data.y);
    let xtx_inv = (x.transpose() * x).try_inverse().ok_or("singular design")?;
    let ols = &xtx_inv * x.transpose() * &y;
    let rss = (&y - x * &ols).norm_squared();
    let df = 2.0 * prior.a1 + y.len() as f64 - p as f64;
    let shape = (2.0 * prior.b1 + rss) / df;
    let kurtosis = 3.0 + 6.0 / (df - 4.0);

    let mut worst: f64 = 0.0;
    for j in 0..p {
        let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| column(&c.beta, j)).collect();
        let refs: Vec<&[f64]> = per_chain.iter().map(|c| c.as_slice()).collect();
        let ess = effective_sample_size(&refs).ok_or("degenerate chain")?;
        let draws = per_chain.concat();
        let sd = (df / (df - 2.0) * shape * xtx_inv[(j, j)]).sqrt();
        let z_mean = (oracles::mean(&draws) - ols[j]) / (sd / ess.sqrt());
        let z_sd = (oracles::var(&draws).sqrt() - sd) / (sd * ((kurtosis - 1.0) / (4.0 * ess)).sqrt());
        worst = worst.max(z_mean.abs()).max(z_sd.abs());
    }
    Ok(verdict(worst < 3.0, format!("largest deviation {worst:.2} MCSE over {p} means and SDs (4 chains)")))
}

struct GirModel {
    graph: ArealGraph,
    design: Design,
    hyper: Hyperpriors,
}

impl GirModel {
    fn draw_prior(&self, rng: &mut SimRng) -> Result<LerouxState, areal::Error> {
        let h = &self.hyper;
        let beta = (0..h.beta_mean.len()).map(|j| h.beta_mean[j] + h.beta_var[j].sqrt() * std_normal(rng)).collect();
        let nu2 = inverse_gamma(rng, h.a1, h.b1);
        let tau2 = inverse_gamma(rng, h.a2, h.b2);
        let rho = open_unit(rng);
        let phi = CarFieldSampler::new(&self.graph, rho, tau2)?.draw(rng);
        Ok(LerouxState { beta, phi, nu2, tau2, rho })
    }

    fn simulate(&self, s: &LerouxState, rng: &mut SimRng) -> Vec<f64> {
        let xb = &self.design.matrix * DVector::from_column_slice(&s.beta);
        (0..self.graph.len()).map(|i| xb[i] + s.phi[i] + s.nu2.sqrt() * std_normal(rng)).collect()
    }
}

fn gir_functions(s: &LerouxState) -> [f64; 9] {
    [s.beta[0], s.beta[1], s.phi[0], s.nu2, s.tau2, s.rho, s.beta[0] * s.beta[0], s.phi[0] * s.phi[0], s.rho * s.rho]
}

const GIR_NAMES: [&str; 9] = ["beta0", "beta1", "phi0", "nu2", "tau2", "rho", "beta0^2", "phi0^2", "rho^2"];

fn getting_it_right() -> Check {
    const CYCLES: usize = 100_000;
    let graph = queen(2, 3);
    let k = graph.len();
    let design = Design::from_columns(
        k,
        1,
        vec![("Intercept".into(), vec![1.0; k]), ("x1".into(), vec![-1.3, -0.6, 0.1, 0.4, 0.9, 1.7])],
    )?;
    let prior = PriorSpec { a1: 5.0, b1: 2.0, a2: 5.0, b2: 2.0, beta_mean: 0.0, beta_var: 1.0 };
    let model = GirModel { hyper: prior.expand(2), graph, design };
    let config = McmcConfig {
        n_iterations: CYCLES,
        burn_in: 0,
        thin: 1,
        seed: 41,
        rho_step: 1.0,
        adapt: false,
        center_effects: false,
    };
    let cache = SpatialCache::new(&model.graph)?;

    let mut rng = stream_rng(41, 100);
    let mut forward = Vec::with_capacity(CYCLES);
    for _ in 0..CYCLES {
        forward.push(gir_functions(&model.draw_prior(&mut rng)?));
    }

    let start = model.draw_prior(&mut rng)?;
    let mut y = model.simulate(&start, &mut rng);
    let mut sampler = LerouxSampler::new(&y, &model.design, &model.graph, &model.hyper, &config, &cache, 0)?;
    sampler.state = start;
    let mut successive = Vec::with_capacity(CYCLES);
    for it in 0..CYCLES {
        sampler.step(&y, it)?;
        successive.push(gir_functions(&sampler.state));
        y = model.simulate(&sampler.state, &mut rng);
    }

    let crit = oracles::bonferroni_z(0.01, GIR_NAMES.len());
    let mut worst = (0.0f64, "");
    for (j, name) in GIR_NAMES.iter().enumerate() {
        let f: Vec<f64> = forward.iter().map(|r| r[j]).collect();
        let s: Vec<f64> = successive.iter().map(|r| r[j]).collect();
        let ess = effective_sample_size(&[&s]).ok_or("degenerate chain")?;
        let z = (oracles::mean(&f) - oracles::mean(&s)) / (oracles::var(&f) / f.len() as f64 + oracles::var(&s) / ess).sqrt();
        if z.abs() > worst.0.abs() {
            worst = (z, name);
        }
    }
    Ok(verdict(
        worst.0.abs() < crit,
        format!("max |z| = {:.2} ({}) vs Bonferroni critical {crit:.2}", worst.0.abs(), worst.1),
    ))
}

fn recovery_and_sbc() -> Check {
    let graph = queen(7, 11);
    let k = graph.len();

    let mut covered = [0usize; 3];
    const REPLICATES: u64 = 50;
    for r in 0..REPLICATES {
        let data = generate_spatial_dataset(&graph, &SimScenario { seed: 500 + r, ..SimScenario::default() })?;
        let hyper = PriorSpec::default().expand(3);
        let fit = fit_spatial(&data.y, &data.design, &graph, &hyper, &McmcConfig { seed: 900 + r, ..McmcConfig::default() })?;
        // centering moves the mean of φ into the intercept
        let phi_bar = oracles::mean(&data.truth.phi);
        for (j, c) in covered.iter_mut().enumerate() {
            let truth = data.truth.beta[j] + if j == 0 { phi_bar } else { 0.0 };
            let (lo, hi) = interval(&column(&fit.beta, j));
            if lo <= truth && truth <= hi {
                *c += 1;
            }
        }
    }
    let coverage_ok = covered.iter().all(|&c| c * 10 >= 9 * REPLICATES as usize);

    const DRAWS: usize = 99;
    const THIN: usize = 100;
    let prior = PriorSpec { a1: 4.0, b1: 0.3, a2: 4.0, b2: 0.45, beta_mean: 0.0, beta_var: 1.0 };
    let model = GirModel {
        hyper: prior.expand(3),
        graph: graph.clone(),
        design: Design::from_columns(k, 1, vec![("Intercept".into(), vec![1.0; k])])?,
    };
    let names = ["beta0", "beta1", "beta2", "nu2", "tau2", "rho", "phi0"];
    let mut bins = vec![[0usize; 10]; names.len()];
    for r in 0..200u64 {
        let mut rng = stream_rng(7000 + r, 0);
        let cols = vec![
            ("Intercept".to_string(), vec![1.0; k]),
            ("x1".to_string(), std_normal_vec(&mut rng, k)),
            ("x2".to_string(), std_normal_vec(&mut rng, k)),
        ];
        let design = Design::from_columns(k, 1, cols)?;
        let truth = model.draw_prior(&mut rng)?;
        let xb = &design.matrix * DVector::from_column_slice(&truth.beta);
        let y: Vec<f64> = (0..k).map(|i| xb[i] + truth.phi[i] + truth.nu2.sqrt() * std_normal(&mut rng)).collect();
        let config = McmcConfig {
            n_iterations: 1000 + DRAWS * THIN,
            burn_in: 1000,
            thin: THIN,
            seed: 7000 + r,
            center_effects: false,
            ..McmcConfig::default()
        };
        let fit = fit_spatial(&y, &design, &graph, &model.hyper, &config)?;
        let draws: [Vec<f64>; 7] = [
            column(&fit.beta, 0),
            column(&fit.beta, 1),
            column(&fit.beta, 2),
            fit.nu2.clone(),
            fit.tau2.clone(),
            fit.rho.clone(),
            column(&fit.phi, 0),
        ];
        let truths = [truth.beta[0], truth.beta[1], truth.beta[2], truth.nu2, truth.tau2, truth.rho, truth.phi[0]];
        for ((d, t), b) in draws.iter().zip(truths).zip(bins.iter_mut()) {
            let rank = d.iter().filter(|&&v| v < t).count();
            b[rank * 10 / (DRAWS + 1)] += 1;
        }
    }
    let stats: Vec<f64> = bins.iter().map(|b| oracles::chi_square_uniform(b)).collect();
    let sbc_ok = stats.iter().all(|&s| s < 21.67);
    let worst = stats.iter().cloned().fold(0.0, f64::max);
    Ok(verdict(
        coverage_ok && sbc_ok,
        format!(
            "coverage of beta {:?}/{REPLICATES}; SBC chi-square max {worst:.2} (critical 21.67) over {}",
            covered,
            names.join(",")
        ),
    ))
}

fn st_density_oracle() -> Check {
    let fixtures = [
        (ArealGraph::lattice(1, 1, ContiguityKind::Queen), 20),
        (ArealGraph::lattice(1, 2, ContiguityKind::Queen), 3),
        (queen(2, 2), 5),
        (ArealGraph::lattice(2, 3, ContiguityKind::Rook), 10),
        (queen(3, 4), 5),
        (queen(2, 5), 6),
        (ArealGraph::lattice(1, 4, ContiguityKind::Rook), 15),
    ];
    let params = [(0.3, -0.172, 0.292, 0.7), (0.95, 0.5, 0.3, 1.3), (0.0, -0.6, -0.2, 0.4), (0.8, 1.2, -0.5, 0.2)];
    let mut rng = stream_rng(61, 0);
    let mut worst_density: f64 = 0.0;
    let mut n_cases = 0;
    for (graph, n_times) in &fixtures {
        let eig = graph.laplacian_eigenvalues()?;
        for &(rho_s, rho1, rho2, tau2) in &params {
            let psi = std_normal_vec(&mut rng, graph.len() * n_times);
            let ours = st_effect_logdensity(&psi, *n_times, rho_s, rho1, rho2, tau2, graph, &eig)?;
            let cov = oracles::dense_st_covariance(graph, *n_times, rho_s, rho1, rho2, tau2);
            let dense = oracles::mvn_logpdf(&psi, &vec![0.0; psi.len()], &cov);
            worst_density = worst_density.max((ours - dense).abs());
            n_cases += 1;
        }
    }

    let mut worst_moment: f64 = 0.0;
    let mut worst_draw: f64 = 0.0;
    for (graph, n_times) in [(ArealGraph::lattice(1, 2, ContiguityKind::Queen), 5usize), (queen(1, 3), 4)] {
        let k = graph.len();
        let n = k * n_times;
        let design = Design::from_columns(
            k,
            n_times,
            vec![("Intercept".into(), vec![1.0; n]), ("x1".into(), std_normal_vec(&mut rng, n))],
        )?;
        let x = &design.matrix;
        let y = std_normal_vec(&mut rng, n);
        let state = StState {
            beta: vec![0.3, -0.7],
            psi: std_normal_vec(&mut rng, n),
            nu2: 0.4,
            tau2: 0.6,
            rho_s: 0.7,
            rho1: 0.4,
            rho2: -0.3,
        };
        // joint Gaussian of (ψ, y) with y = Xβ + ψ + ε
        let prior = oracles::dense_st_covariance(&graph, n_times, state.rho_s, state.rho1, state.rho2, state.tau2);
        let mut joint = DMatrix::zeros(2 * n, 2 * n);
        joint.view_mut((0, 0), (n, n)).copy_from(&prior);
        joint.view_mut((0, n), (n, n)).copy_from(&prior);
        joint.view_mut((n, 0), (n, n)).copy_from(&prior);
        joint.view_mut((n, n), (n, n)).copy_from(&(&prior + DMatrix::identity(n, n) * state.nu2));
        let xb = x * DVector::from_column_slice(&state.beta);
        let mean = DVector::from_iterator(2 * n, (0..n).map(|_| 0.0).chain(xb.iter().copied()));

        for t in 0..n_times {
            let keep: Vec<usize> = (t * k..(t + 1) * k).collect();
            let given: Vec<usize> = (0..2 * n).filter(|i| !keep.contains(i)).collect();
            let values: Vec<f64> = given.iter().map(|&i| if i < n { state.psi[i] } else { y[i - n] }).collect();
            let (m_ref, c_ref) = oracles::condition(&mean, &joint, &keep, &given, &values);
            let p_ref = c_ref.clone().try_inverse().ok_or("singular conditional covariance")?;
            let (m, p) = psi_conditional_moments(t, &state, &y, x, &graph);
            worst_moment = worst_moment.max((m - &m_ref).amax()).max((p - p_ref).amax());

            // the block sampler draws from those moments
            let draws = 20_000;
            let mut s = state.clone();
            let mut sum = DVector::zeros(k);
            for _ in 0..draws {
                psi_block_update(t, &mut s, &y, x, &graph, &mut rng)?;
                sum += DVector::from_column_slice(&s.psi[t * k..(t + 1) * k]);
            }
            let avg = sum / draws as f64;
            for i in 0..k {
                let se = (c_ref[(i, i)] / draws as f64).sqrt();
                worst_draw = worst_draw.max(((avg[i] - m_ref[i]) / se).abs());
            }
        }
    }
    Ok(verdict(
        worst_density <= 1e-8 && worst_moment <= 1e-8 && worst_draw < 4.5,
        format!(
            "log-density max error {worst_density:.1e} over {n_cases} cases; conditional moments max error \
             {worst_moment:.1e}; block draw mean max |z| {worst_draw:.2}"
        ),
    ))
}

fn model_identity() -> Check {
    let graph = queen(7, 11);
    let data = generate_spatial_dataset(&graph, &SimScenario { seed: 71, ..SimScenario::default() })?;
    let hyper = PriorSpec::default().expand(data.design.n_columns());
    let mcmc = McmcConfig { seed: 13, ..McmcConfig::default() };
    let spatial = fit_spatial(&data.y, &data.design, &graph, &hyper, &mcmc)?;

    let frozen = TemporalMode::Fixed { rho1: 0.0, rho2: 0.0 };
    let single = StConfig { mcmc: mcmc.clone(), psi_update: PsiUpdate::SingleSite, temporal: frozen, ..StConfig::default() };
    let st = fit_st(&data.y, &data.design, &graph, &hyper, &single)?;
    let identical = st.beta == spatial.beta
        && st.nu2 == spatial.nu2
        && st.tau2 == spatial.tau2
        && st.rho_s == spatial.rho
        && st.total_loglik == spatial.total_loglik
        && st.loglik.to_matrix()? == spatial.loglik
        && st.psi_mean.iter().zip(spatial.phi_mean()).all(|(a, b)| (a - b).abs() <= 1e-12);

    let block = StConfig {
        mcmc: McmcConfig { seed: 14, ..mcmc.clone() },
        psi_update: PsiUpdate::Block,
        temporal: frozen,
        ..StConfig::default()
    };
    let st_block = fit_st(&data.y, &data.design, &graph, &hyper, &block)?;
    let a = spatial.parameter_draws();
    let b = st_block.parameter_draws();
    let n_params = a.len();
    let crit = oracles::bonferroni_z(0.01, n_params);
    let mut worst: f64 = 0.0;
    for ((_, da), (_, db)) in a.iter().zip(&b) {
        worst = worst.max(mean_z(da, db)?.abs());
    }

    let scenario = SimScenario { n_times: 90, seed: 73, ..SimScenario::default() };
    let panel = generate_st_dataset(&graph, &scenario)?;
    let config = StConfig { mcmc: McmcConfig { seed: 15, ..StConfig::default().mcmc }, ..StConfig::default() };
    let fit = fit_st(&panel.y, &panel.design, &graph, &PriorSpec::default().expand(3), &config)?;
    let (r1, r2) = (interval(&fit.rho1), interval(&fit.rho2));
    let covers = |(lo, hi): (f64, f64), t: f64| lo <= t && t <= hi;
    let ar_ok = covers(r1, scenario.rho1) && covers(r2, scenario.rho2);

    Ok(verdict(
        identical && worst < crit && ar_ok,
        format!(
            "single-site T=1 bit-identical: {identical}; block vs spatial max |z| {worst:.2} (critical {crit:.2}); \
             rho1 95% [{:.3}, {:.3}], rho2 95% [{:.3}, {:.3}]",
            r1.0, r1.1, r2.0, r2.1
        ),
    ))
}

fn manual_waic(ll: &DMatrix<f64>) -> (f64, f64) {
    let s = ll.nrows() as f64;
    let mut lppd = 0.0;
    let mut pw = 0.0;
    for j in 0..ll.ncols() {
        let col = column(ll, j);
        lppd += (col.iter().map(|v| v.exp()).sum::<f64>() / s).ln();
        pw += oracles::var(&col);
    }
    (-2.0 * (lppd - pw), pw)
}

fn criteria_oracles() -> Check {
    let mut errors: Vec<f64> = Vec::new();

    let (d, pd) = dic(&[10.0, 12.0, 14.0], 11.0)?;
    errors.extend([(d - 13.0).abs(), (pd - 1.0).abs()]);

    let fixture = DMatrix::from_row_slice(2, 2, &[-1.0, -2.0, -1.5, -0.5]);
    let lppd = ((-1.0f64).exp() / 2.0 + (-1.5f64).exp() / 2.0).ln() + ((-2.0f64).exp() / 2.0 + (-0.5f64).exp() / 2.0).ln();
    let (w, p) = waic(&fixture)?;
    errors.extend([(p - 1.25).abs(), (w + 2.0 * (lppd - 1.25)).abs()]);

    let mut rng = stream_rng(81, 0);
    let (draws, obs) = (40, 7);
    let ll = DMatrix::from_fn(draws, obs, |_, _| -1.0 - 2.0 * rng.random::<f64>());
    let (w_ref, p_ref) = manual_waic(&ll);
    let (w, p) = waic(&ll)?;
    errors.extend([(w - w_ref).abs(), (p - p_ref).abs()]);

    let mut spilled = PointwiseLogLik::with_capacity(obs, draws, 16)?;
    for r in 0..draws {
        spilled.push_row(&column(&ll.transpose(), r))?;
    }
    spilled.finish()?;
    let (w_disk, _) = waic_store(&spilled)?;
    errors.push((w_disk - w_ref).abs());
    let base = errors.iter().cloned().fold(0.0, f64::max);

    let mut rows: Vec<usize> = (0..draws).collect();
    let mut cols: Vec<usize> = (0..obs).collect();
    let mut reorder: f64 = 0.0;
    for _ in 0..20 {
        fisher_yates(&mut rows, &mut rng);
        fisher_yates(&mut cols, &mut rng);
        let shuffled = DMatrix::from_fn(draws, obs, |i, j| ll[(rows[i], cols[j])]);
        let (ws, ps) = waic(&shuffled)?;
        reorder = reorder.max((ws - w_ref).abs()).max((ps - p_ref).abs());
    }
    Ok(verdict(
        base <= 1e-9 && reorder <= 1e-9,
        format!("max fixture error {base:.1e}; max change under reordering {reorder:.1e}"),
    ))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, Box<dyn std::error::Error>> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?.install(f))
}

fn determinism() -> Check {
    let graph = queen(7, 11);
    let data = generate_spatial_dataset(&graph, &SimScenario { seed: 91, ..SimScenario::default() })?;
    let hyper = PriorSpec::default().expand(data.design.n_columns());
    let config = McmcConfig { n_iterations: 6000, burn_in: 1000, thin: 5, seed: 92, ..McmcConfig::default() };
    let spatial_csv = |threads| -> Result<Vec<u8>, Box<dyn std::error::Error>> {
        let chains = in_pool(threads, || fit_spatial_chains(&data.y, &data.design, &graph, &hyper, &config, 4))??;
        let mut out = Vec::new();
        summarize_spatial(&chains, &data.y, &data.design.matrix)?.write_csv(&mut out)?;
        Ok(out)
    };
    let one = spatial_csv(1)?;
    let spatial_ok = one == spatial_csv(4)? && one == spatial_csv(4)?;

    let panel = generate_st_dataset(&queen(3, 4), &SimScenario { n_times: 30, seed: 93, ..SimScenario::default() })?;
    let st_config = StConfig { mcmc: McmcConfig { n_iterations: 2000, burn_in: 500, thin: 5, seed: 94, ..McmcConfig::default() }, ..StConfig::default() };
    let st_graph = queen(3, 4);
    let st_csv = |threads| -> Result<Vec<u8>, Box<dyn std::error::Error>> {
        let fit = in_pool(threads, || fit_st(&panel.y, &panel.design, &st_graph, &hyper, &st_config))??;
        let mut out = Vec::new();
        summarize_st(&fit, &panel.y, &panel.design.matrix)?.write_csv(&mut out)?;
        Ok(out)
    };
    let st_one = st_csv(1)?;
    let st_ok = st_one == st_csv(4)? && st_one == st_csv(4)?;
    Ok(verdict(
        spatial_ok && st_ok,
        format!("spatial summary identical across runs and 1/4 threads: {spatial_ok}; spatio-temporal: {st_ok}"),
    ))
}

fn read_panel(path: &PathBuf, graph: &ArealGraph) -> Result<AreaPanel, Box<dyn std::error::Error>> {
    Ok(AreaPanel::read_long_csv(BufReader::new(File::open(path)?))?.align_to(graph)?)
}

fn chicago() -> Check {
    let Some(dir) = std::env::var_os("AREAL_CHICAGO_DIR").map(PathBuf::from) else {
        return Ok(Outcome::Skip("AREAL_CHICAGO_DIR not set".into()));
    };
    let files = [dir.join("community_areas.geojson"), dir.join("totals.csv"), dir.join("daily.csv")];
    if let Some(missing) = files.iter().find(|f| !f.exists()) {
        return Ok(Outcome::Skip(format!("{} not found", missing.display())));
    }
    let polygons = read_geojson_polygons(BufReader::new(File::open(&files[0])?), "area_numbe")?;
    let graph = build_contiguity(&polygons, ContiguityRule::default())?;
    let totals = read_panel(&files[1], &graph)?;
    let daily = read_panel(&files[2], &graph)?;
    let var = |p: &AreaPanel, name: &str| p.expanded(name);
    let mut fails = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            fails.push(what);
        }
    };

    let rides = var(&totals, "rideshares")?;
    let s = summarize(&rides)?;
    let table2 = [(s.min, 10.39), (s.mean, 12.77), (s.median, 12.67), (s.max, 16.14)];
    check(
        table2.iter().all(|(a, b)| (a - b).abs() <= 0.01),
        format!("rideshare summary {:.3} {:.3} {:.3} {:.3}", s.min, s.mean, s.median, s.max),
    );
    let correlations = [
        ("rideshares", "crimes", 0.75),
        ("transit_moderate", "transit_high", -0.97),
        ("median_income", "econ_active", 0.86),
    ];
    for (a, b, target) in correlations {
        let r = pearson(&var(&totals, a)?, &var(&totals, b)?);
        check((r - target).abs() <= 0.02, format!("r({a}, {b}) = {r:.3}"));
    }
    let moran = morans_i(&rides, &graph, WeightScheme::RowStandardized)?;
    check((moran - 0.460).abs() <= 0.05, format!("rideshare Moran I = {moran:.3}"));

    let predictors = [
        "population", "crimes", "econ_active", "median_income", "no_vehicle", "transit_high", "walk_moderate",
        "walk_high",
    ];
    let signs = [-1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0];
    let design = build_design(&totals, &DesignSpec::spatial(&predictors))?;
    let hyper = PriorSpec::default().expand(design.n_columns());
    let fit = fit_spatial(&rides, &design, &graph, &hyper, &McmcConfig::default())?;
    for ((name, m), sign) in design.columns.iter().zip(fit.beta_mean()).zip(signs) {
        check(m * sign > 0.0, format!("spatial {name} mean {m:.3}"));
    }
    let (_, resid) = fitted_and_residuals(&fit, &rides, &design.matrix)?;
    let rm = residual_moran(&resid, &graph, WeightScheme::RowStandardized, 999, 1)?;
    check(rm.p_value >= 0.5, format!("residual Moran I {:.3} p {:.3}", rm.statistic, rm.p_value));

    let spec = DesignSpec {
        predictors: predictors.iter().map(|s| s.to_string()).collect(),
        trend: Trend::ScaledDay { divisor: MEAN_MONTH_DAYS },
        weekend: true,
        intercept: true,
    };
    let design = build_design(&daily, &spec)?;
    let y = var(&daily, "rideshares")?;
    let hyper = PriorSpec::default().expand(design.n_columns());
    let st = fit_st(&y, &design, &graph, &hyper, &StConfig::default())?;
    let rho_s = oracles::mean(&st.rho_s);
    check(rho_s > 0.9, format!("rho_s mean {rho_s:.3}"));
    for (name, m) in design.columns.iter().zip(st.beta_mean()) {
        if name == "Trend" || name == "Weekend" {
            check(m > 0.0, format!("{name} mean {m:.4}"));
        }
    }
    let (r, slope) = fit_quality(&st.fitted_mean(&design.matrix), &y)?;
    check(r >= 0.9, format!("fit quality r {r:.3} slope {slope:.3}"));

    let pass = fails.is_empty();
    Ok(verdict(
        pass,
        if pass {
            format!("Table 2 row, correlations, Moran {moran:.3}, Table 3/4 signs, residual p {:.3}, r {r:.3}", rm.p_value)
        } else {
            format!("mismatches: {}", fails.join("; "))
        },
    ))
}

fn performance() -> Check {
    let graph = queen(7, 11);
    let data = generate_spatial_dataset(&graph, &SimScenario { seed: 111, ..SimScenario::default() })?;
    let hyper = PriorSpec::default().expand(3);
    let start = Instant::now();
    fit_spatial(&data.y, &data.design, &graph, &hyper, &McmcConfig::default())?;
    let spatial = start.elapsed();

    let panel = generate_st_dataset(&graph, &SimScenario { n_times: 365, seed: 112, ..SimScenario::default() })?;
    let start = Instant::now();
    let fit = fit_st(&panel.y, &panel.design, &graph, &hyper, &StConfig::default())?;
    let st = start.elapsed();
    Ok(verdict(
        spatial < Duration::from_secs(60) && st < Duration::from_secs(1800),
        format!(
            "spatial K=77 22000 iterations {spatial:.2?} (limit 60 s); spatio-temporal K=77 T=365 11000 iterations \
             {st:.1?} (limit 30 min, log-likelihood on disk: {})",
            fit.loglik.on_disk()
        ),
    ))
}
