//! Spatio-temporal regression with AR(2) random effects and Leroux CAR
//! innovations
//!
//! ```text
//! y_kt | μ_kt ~ N(μ_kt, ν²),   μ_kt = x_ktᵀB + ψ_kt
//! ψ_1                ~ N(0, τ² Q(ρ_S)⁻¹)
//! ψ_2 | ψ_1          ~ N(ρ_1T ψ_1, τ² Q(ρ_S)⁻¹)
//! ψ_t | ψ_t−1, ψ_t−2 ~ N(ρ_1T ψ_t−1 + ρ_2T ψ_t−2, τ² Q(ρ_S)⁻¹),  t ≥ 3
//! ```
//!
//! Panels are stored slice-major: cell (k, t) lives at `t·K + k`. Slice
//! indices are 0-based in code.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::leroux::{
    center, check_finite, check_full_rank, gaussian_loglik, leroux_log_det, leroux_precision,
    least_squares_start, rho_metropolis, site_sweep, BetaSampler, Hyperpriors, McmcConfig,
    SpatialCache, StepAdapter,
};
use crate::loglik::{PointwiseLogLik, DEFAULT_MEMORY_LIMIT};
use crate::pipeline::Design;
use crate::rng::{inverse_gamma, open_unit, std_normal, stream_rng, SimRng};
use crate::sparse::EnvelopeCholesky;
use crate::stats::{normal_logpdf, ols_slope, pearson};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StState {
    pub beta: Vec<f64>,
    /// K·T, slice-major
    pub psi: Vec<f64>,
    pub nu2: f64,
    pub tau2: f64,
    pub rho_s: f64,
    pub rho1: f64,
    pub rho2: f64,
}

/// |ρ2| < 1, ρ1 + ρ2 < 1, ρ2 − ρ1 < 1.
pub fn in_stationarity_triangle(rho1: f64, rho2: f64) -> bool {
    rho2.abs() < 1.0 && rho1 + rho2 < 1.0 && rho2 - rho1 < 1.0
}

#[inline]
fn slice(v: &[f64], k: usize, t: usize) -> &[f64] {
    &v[t * k..(t + 1) * k]
}

/// Coefficient of ψ_j in innovation e_s.
#[inline]
fn ar_coef(s: usize, j: usize, rho1: f64, rho2: f64) -> f64 {
    if j == s {
        1.0
    } else if j + 1 == s {
        -rho1
    } else if j + 2 == s {
        -rho2
    } else {
        0.0
    }
}

/// Innovation e_s = ψ_s − ρ1 ψ_s−1 − ρ2 ψ_s−2 (lags before slice 0 omitted).
pub fn innovation(psi: &[f64], k: usize, s: usize, rho1: f64, rho2: f64) -> Vec<f64> {
    let mut e = slice(psi, k, s).to_vec();
    for lag in 1..=2.min(s) {
        let c = ar_coef(s, s - lag, rho1, rho2);
        if c != 0.0 {
            for (ei, pi) in e.iter_mut().zip(slice(psi, k, s - lag)) {
                *ei += c * pi;
            }
        }
    }
    e
}

/// Normalized joint log-density of ψ (all constants included).
#[allow(clippy::too_many_arguments)]
pub fn st_effect_logdensity(
    psi: &[f64],
    n_times: usize,
    rho_s: f64,
    rho1: f64,
    rho2: f64,
    tau2: f64,
    graph: &ArealGraph,
    eigenvalues: &[f64],
) -> Result<f64> {
    let k = graph.len();
    if psi.len() != k * n_times {
        return Err(Error::Dimension(format!("psi has {} entries, expected {}", psi.len(), k * n_times)));
    }
    if !in_stationarity_triangle(rho1, rho2) {
        return Err(Error::NonStationary { rho1, rho2 });
    }
    let q = leroux_precision(graph, rho_s);
    let mut quad = 0.0;
    for s in 0..n_times {
        quad += q.quad_form(&innovation(psi, k, s, rho1, rho2));
    }
    let n = (k * n_times) as f64;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI * tau2).ln()
        + 0.5 * n_times as f64 * leroux_log_det(eigenvalues, rho_s)
        - quad / (2.0 * tau2))
}

/// Prior terms of slice t's full conditional: the precision multiplier
/// Σ c_s² and the cross term m = Σ c_s r_s, where c_s is ψ_t's coefficient
/// in innovation s ∈ {t, t+1, t+2} and r_s the rest of that innovation.
pub fn psi_prior_terms(psi: &[f64], k: usize, n_times: usize, t: usize, rho1: f64, rho2: f64) -> (f64, Vec<f64>) {
    let mut csq = 0.0;
    let mut m = vec![0.0; k];
    for s in t..(t + 3).min(n_times) {
        let c = ar_coef(s, t, rho1, rho2);
        csq += c * c;
        for j in s.saturating_sub(2)..=s {
            if j == t {
                continue;
            }
            let a = c * ar_coef(s, j, rho1, rho2);
            if a != 0.0 {
                for (mi, pj) in m.iter_mut().zip(slice(psi, k, j)) {
                    *mi += a * pj;
                }
            }
        }
    }
    (csq, m)
}

/// Dense conditional moments of ψ_t: precision csq·Q/τ² + I/ν² and mean
/// precision⁻¹(−Q m/τ² + r_t/ν²), with r_t = y_t − X_t B.
pub fn psi_conditional_moments(
    t: usize,
    state: &StState,
    y: &[f64],
    x: &DMatrix<f64>,
    graph: &ArealGraph,
) -> (DVector<f64>, DMatrix<f64>) {
    let k = graph.len();
    let n_times = y.len() / k;
    let (csq, m) = psi_prior_terms(&state.psi, k, n_times, t, state.rho1, state.rho2);
    let q = leroux_precision(graph, state.rho_s);
    let precision = q.to_dense() * (csq / state.tau2) + DMatrix::identity(k, k) / state.nu2;
    let resid = slice_residual(t, k, y, x, &state.beta);
    let qm = q.matvec(&m);
    let b = DVector::from_fn(k, |i, _| -qm[i] / state.tau2 + resid[i] / state.nu2);
    let mean = precision.clone().cholesky().expect("conditional precision is positive definite").solve(&b);
    (mean, precision)
}

fn slice_residual(t: usize, k: usize, y: &[f64], x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    (0..k)
        .map(|i| {
            let row = t * k + i;
            y[row] - (0..beta.len()).map(|j| x[(row, j)] * beta[j]).sum::<f64>()
        })
        .collect()
}

/// Sparse factorizations of the slice precisions, keyed by how many later
/// innovations involve the slice (0, 1 or 2).
struct SliceFactors {
    chol: [EnvelopeCholesky; 3],
    key: [Option<f64>; 3],
}

impl SliceFactors {
    fn new(graph: &ArealGraph) -> Self {
        let c = EnvelopeCholesky::for_graph(graph);
        SliceFactors {
            chol: [c.clone(), c.clone(), c],
            key: [None; 3],
        }
    }

    fn invalidate(&mut self) {
        self.key = [None; 3];
    }

    fn get(&mut self, slot: usize, csq: f64, graph: &ArealGraph, rho: f64, tau2: f64, nu2: f64) -> Result<&EnvelopeCholesky> {
        if self.key[slot] != Some(csq) {
            let diag: Vec<f64> = (0..graph.len())
                .map(|i| csq * (rho * graph.degree(i) as f64 + 1.0 - rho) / tau2 + 1.0 / nu2)
                .collect();
            self.chol[slot]
                .factor(&diag, -csq * rho / tau2)
                .map_err(|f| Error::Factorization {
                    k: graph.len(),
                    rho,
                    reason: format!("non-positive pivot {} at unit {}", f.pivot, f.unit),
                })?;
            self.key[slot] = Some(csq);
        }
        Ok(&self.chol[slot])
    }
}

/// Draws ψ_t as one block from its Gaussian full conditional.
#[allow(clippy::too_many_arguments)]
fn psi_block_draw<R: Rng + ?Sized>(
    t: usize,
    state: &mut StState,
    resid_t: &[f64],
    graph: &ArealGraph,
    n_times: usize,
    factors: &mut SliceFactors,
    rng: &mut R,
) -> Result<()> {
    let k = graph.len();
    let (csq, m) = psi_prior_terms(&state.psi, k, n_times, t, state.rho1, state.rho2);
    let qm = leroux_precision(graph, state.rho_s).matvec(&m);
    let b: Vec<f64> = (0..k).map(|i| -qm[i] / state.tau2 + resid_t[i] / state.nu2).collect();
    let slot = (n_times - 1 - t).min(2);
    let chol = factors.get(slot, csq, graph, state.rho_s, state.tau2, state.nu2)?;
    let z: Vec<f64> = (0..k).map(|_| std_normal(rng)).collect();
    let draw = chol.gaussian_draw(&b, &z);
    state.psi[t * k..(t + 1) * k].copy_from_slice(&draw);
    Ok(())
}

/// One block Gibbs draw of ψ_t (sparse factorization of the conditional
/// precision).
pub fn psi_block_update<R: Rng + ?Sized>(
    t: usize,
    state: &mut StState,
    y: &[f64],
    x: &DMatrix<f64>,
    graph: &ArealGraph,
    rng: &mut R,
) -> Result<()> {
    let k = graph.len();
    let n_times = y.len() / k;
    if t >= n_times {
        return Err(Error::Dimension(format!("slice {t} out of range for T = {n_times}")));
    }
    let resid = slice_residual(t, k, y, x, &state.beta);
    let mut factors = SliceFactors::new(graph);
    psi_block_draw(t, state, &resid, graph, n_times, &mut factors, rng)
}

/// Precision M and linear term b of the Gaussian (ρ1, ρ2) conditional.
pub fn temporal_rho_conditional(
    psi: &[f64],
    n_times: usize,
    rho_s: f64,
    tau2: f64,
    graph: &ArealGraph,
) -> Result<(Matrix2<f64>, Vector2<f64>)> {
    let k = graph.len();
    if n_times < 3 {
        return Err(Error::NonIdentifiable(format!(
            "the second-order coefficient needs at least 3 time slices, got {n_times}"
        )));
    }
    let q = leroux_precision(graph, rho_s);
    let qpsi: Vec<Vec<f64>> = (0..n_times).map(|t| q.matvec(slice(psi, k, t))).collect();
    let dot = |a: usize, b: usize| -> f64 { slice(psi, k, a).iter().zip(&qpsi[b]).map(|(x, y)| x * y).sum() };
    let mut m = Matrix2::zeros();
    let mut b = Vector2::zeros();
    for s in 1..n_times {
        m[(0, 0)] += dot(s - 1, s - 1);
        b[0] += dot(s - 1, s);
        if s >= 2 {
            m[(0, 1)] += dot(s - 1, s - 2);
            m[(1, 1)] += dot(s - 2, s - 2);
            b[1] += dot(s - 2, s);
        }
    }
    m[(1, 0)] = m[(0, 1)];
    Ok((m / tau2, b / tau2))
}

fn uniform_triangle<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    loop {
        let r1 = 4.0 * open_unit(rng) - 2.0;
        let r2 = 2.0 * open_unit(rng) - 1.0;
        if in_stationarity_triangle(r1, r2) {
            return (r1, r2);
        }
    }
}

const MAX_REJECTIONS: usize = 1000;

/// Outcome of a temporal coefficient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalDraw {
    pub rho1: f64,
    pub rho2: f64,
    /// The rejection cap was hit and a Metropolis step was used instead.
    pub fallback: bool,
}

/// Draws (ρ1, ρ2) from the bivariate Gaussian conditional truncated to the
/// stationarity triangle (flat prior on the triangle).
pub fn temporal_rho_update<R: Rng + ?Sized>(
    state: &StState,
    n_times: usize,
    graph: &ArealGraph,
    rng: &mut R,
) -> Result<TemporalDraw> {
    let (m, b) = temporal_rho_conditional(&state.psi, n_times, state.rho_s, state.tau2, graph)?;
    if !m.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("temporal coefficient conditional".into()));
    }
    if m.iter().all(|&v| v == 0.0) {
        let (rho1, rho2) = uniform_triangle(rng);
        return Ok(TemporalDraw { rho1, rho2, fallback: false });
    }
    let Some(chol) = Cholesky::new(m) else {
        return Err(Error::NonIdentifiable(
            "temporal coefficient precision is singular (degenerate random effects)".into(),
        ));
    };
    let mean = chol.solve(&b);
    let l = chol.l();
    for _ in 0..MAX_REJECTIONS {
        let z = Vector2::new(std_normal(rng), std_normal(rng));
        let dev = l.tr_solve_lower_triangular(&z).expect("non-singular factor");
        let d = mean + dev;
        if in_stationarity_triangle(d[0], d[1]) {
            return Ok(TemporalDraw { rho1: d[0], rho2: d[1], fallback: false });
        }
    }
    // Posterior mass sits mostly outside the triangle: random-walk
    // Metropolis on the truncated Gaussian from the current point.
    let log_target = |r1: f64, r2: f64| {
        let d = Vector2::new(r1, r2) - mean;
        -0.5 * (d.transpose() * m * d)[(0, 0)]
    };
    let (sd1, sd2) = {
        let cov = chol.inverse();
        (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt())
    };
    let (mut r1, mut r2) = (state.rho1, state.rho2);
    for _ in 0..20 {
        let p1 = r1 + sd1 * std_normal(rng);
        let p2 = r2 + sd2 * std_normal(rng);
        let u = open_unit(rng);
        if in_stationarity_triangle(p1, p2) && u.ln() < log_target(p1, p2) - log_target(r1, r2) {
            r1 = p1;
            r2 = p2;
        }
    }
    Ok(TemporalDraw { rho1: r1, rho2: r2, fallback: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiUpdate {
    /// Whole-slice draws via sparse Cholesky.
    Block,
    /// Site-by-site Gibbs within each slice.
    SingleSite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TemporalMode {
    Sample,
    Fixed { rho1: f64, rho2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StConfig {
    pub mcmc: McmcConfig,
    pub psi_update: PsiUpdate,
    pub temporal: TemporalMode,
    /// Pointwise log-likelihood values kept in memory before spilling to disk.
    pub loglik_memory_limit: usize,
}

impl Default for StConfig {
    fn default() -> Self {
        StConfig {
            mcmc: McmcConfig {
                n_iterations: 11_000,
                burn_in: 1_000,
                thin: 10,
                ..McmcConfig::default()
            },
            psi_update: PsiUpdate::Block,
            temporal: TemporalMode::Sample,
            loglik_memory_limit: DEFAULT_MEMORY_LIMIT,
        }
    }
}

/// Posterior output of [`fit_st`]. ψ is summarized by its running mean.
#[derive(Debug)]
pub struct StFit {
    pub columns: Vec<String>,
    pub n_units: usize,
    pub n_times: usize,
    pub seed: u64,
    /// n_draws × p
    pub beta: DMatrix<f64>,
    pub nu2: Vec<f64>,
    pub tau2: Vec<f64>,
    pub rho_s: Vec<f64>,
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    /// Posterior mean of ψ, slice-major.
    pub psi_mean: Vec<f64>,
    /// Draws × K·T pointwise log-likelihoods.
    pub loglik: PointwiseLogLik,
    pub total_loglik: Vec<f64>,
    pub rho_acceptance: f64,
    pub rho_step: f64,
    /// Temporal updates that fell back to Metropolis.
    pub temporal_fallbacks: usize,
}

impl StFit {
    pub fn n_draws(&self) -> usize {
        self.nu2.len()
    }

    pub fn beta_mean(&self) -> Vec<f64> {
        crate::leroux::column_means(&self.beta)
    }

    /// Posterior mean of X B + ψ over all cells.
    pub fn fitted_mean(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let xb = x * DVector::from_vec(self.beta_mean());
        xb.iter().zip(&self.psi_mean).map(|(a, b)| a + b).collect()
    }

    pub fn parameter_draws(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, name)| (name.clone(), self.beta.column(j).iter().copied().collect()))
            .collect();
        out.push(("tau2".into(), self.tau2.clone()));
        out.push(("nu2".into(), self.nu2.clone()));
        out.push(("rho_s".into(), self.rho_s.clone()));
        out.push(("rho_1t".into(), self.rho1.clone()));
        out.push(("rho_2t".into(), self.rho2.clone()));
        out
    }
}

/// Pearson r and the slope of actual on fitted.
pub fn fit_quality(fitted: &[f64], actual: &[f64]) -> Result<(f64, f64)> {
    if fitted.is_empty() || fitted.len() != actual.len() {
        return Err(Error::Dimension(format!(
            "fit_quality needs equal non-empty inputs ({} vs {})",
            fitted.len(),
            actual.len()
        )));
    }
    Ok((pearson(fitted, actual), ols_slope(fitted, actual)))
}

/// Fits the spatio-temporal model. `y` and the design rows are slice-major.
pub fn fit_st(
    y: &[f64],
    design: &Design,
    graph: &ArealGraph,
    hyper: &Hyperpriors,
    config: &StConfig,
) -> Result<StFit> {
    let mcmc = &config.mcmc;
    mcmc.validate()?;
    let x = &design.matrix;
    let (k, p) = (graph.len(), x.ncols());
    hyper.validate(p)?;
    if k == 0 || y.len() % k != 0 || y.is_empty() {
        return Err(Error::Dimension(format!("response length {} is not a multiple of K = {k}", y.len())));
    }
    let n_times = y.len() / k;
    if x.nrows() != y.len() || design.n_units != k || design.n_times != n_times {
        return Err(Error::Dimension(format!(
            "design is {}x{} over {} units, {} times; response implies K = {k}, T = {n_times}",
            x.nrows(),
            p,
            design.n_units,
            design.n_times
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("response entry {i}")));
    }
    check_full_rank(x, &design.columns)?;
    let (mut rho1, mut rho2, sample_temporal) = match config.temporal {
        TemporalMode::Fixed { rho1, rho2 } => {
            if !in_stationarity_triangle(rho1, rho2) {
                return Err(Error::NonStationary { rho1, rho2 });
            }
            (rho1, rho2, false)
        }
        TemporalMode::Sample => (0.0, 0.0, n_times > 1),
    };
    if sample_temporal && n_times < 3 {
        return Err(Error::NonIdentifiable(format!(
            "temporal coefficients cannot be sampled with T = {n_times}; fix them instead"
        )));
    }
    if n_times == 1 {
        // no innovation involves the lag coefficients
        rho1 = 0.0;
        rho2 = 0.0;
    }

    let cache = SpatialCache::new(graph)?;
    let mut rng: SimRng = stream_rng(mcmc.seed, 0);
    let (beta0, var0) = least_squares_start(x, y)?;
    let mut state = StState {
        beta: beta0,
        psi: vec![0.0; k * n_times],
        nu2: var0,
        tau2: var0,
        rho_s: 0.5,
        rho1,
        rho2,
    };
    let sampler = BetaSampler::new(x, hyper);
    let intercept = design.intercept_column().filter(|_| mcmc.center_effects);
    let mut adapter = StepAdapter::new(mcmc.rho_step);
    let mut factors = SliceFactors::new(graph);

    let n = mcmc.n_retained();
    let n_cells = k * n_times;
    let mut loglik = PointwiseLogLik::with_capacity(n_cells, n, config.loglik_memory_limit)?;
    let mut beta_d = Vec::with_capacity(n * p);
    let (mut nu2_d, mut tau2_d, mut rho_d, mut r1_d, mut r2_d, mut total_d) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut psi_sum = vec![0.0; n_cells];
    let mut fallbacks = 0;
    let mut ll_row = vec![0.0; n_cells];

    for it in 0..mcmc.n_iterations {
        let target: Vec<f64> = y.iter().zip(&state.psi).map(|(a, b)| a - b).collect();
        state.beta = sampler.draw(x, &target, state.nu2, &mut rng)?;
        check_finite(it, "beta", &state.beta)?;

        let xb = x * DVector::from_column_slice(&state.beta);
        factors.invalidate();
        for t in 0..n_times {
            let resid: Vec<f64> = (0..k).map(|i| y[t * k + i] - xb[t * k + i]).collect();
            match config.psi_update {
                PsiUpdate::Block => {
                    psi_block_draw(t, &mut state, &resid, graph, n_times, &mut factors, &mut rng)?;
                }
                PsiUpdate::SingleSite => {
                    let (csq, m) = psi_prior_terms(&state.psi, k, n_times, t, state.rho1, state.rho2);
                    let qm = leroux_precision(graph, state.rho_s).matvec(&m);
                    let (rho_s, tau2, nu2) = (state.rho_s, state.tau2, state.nu2);
                    let effects = &mut state.psi[t * k..(t + 1) * k];
                    site_sweep(graph, effects, &resid, csq, Some(&qm), rho_s, tau2, nu2, &mut rng);
                }
            }
        }
        if let Some(c) = intercept {
            let mean = center(&mut state.psi);
            state.beta[c] += mean;
        }
        check_finite(it, "psi", &state.psi)?;

        let xb = x * DVector::from_column_slice(&state.beta);
        let ssr: f64 = (0..n_cells).map(|i| (y[i] - xb[i] - state.psi[i]).powi(2)).sum();
        state.nu2 = inverse_gamma(&mut rng, hyper.a1 + n_cells as f64 / 2.0, hyper.b1 + ssr / 2.0);
        check_finite(it, "nu2", &[state.nu2])?;

        let (mut lap, mut sq) = (0.0, 0.0);
        for s in 0..n_times {
            let e = innovation(&state.psi, k, s, state.rho1, state.rho2);
            lap += graph.laplacian_form(&e);
            sq += e.iter().map(|v| v * v).sum::<f64>();
        }
        let quad = state.rho_s * lap + (1.0 - state.rho_s) * sq;
        state.tau2 = inverse_gamma(&mut rng, hyper.a2 + n_cells as f64 / 2.0, hyper.b2 + quad / 2.0);
        check_finite(it, "tau2", &[state.tau2])?;

        let (rho_s, accepted) = rho_metropolis(
            &mut rng,
            state.rho_s,
            n_times,
            lap,
            sq,
            state.tau2,
            &cache.eigenvalues,
            adapter.step,
        );
        state.rho_s = rho_s;
        adapter.record(accepted, mcmc.adapt && it < mcmc.burn_in);
        check_finite(it, "rho_s", &[state.rho_s])?;

        if sample_temporal {
            let d = temporal_rho_update(&state, n_times, graph, &mut rng)?;
            state.rho1 = d.rho1;
            state.rho2 = d.rho2;
            fallbacks += d.fallback as usize;
            check_finite(it, "rho_t", &[state.rho1, state.rho2])?;
        }

        if mcmc.retains(it) {
            beta_d.extend_from_slice(&state.beta);
            for (i, v) in ll_row.iter_mut().enumerate() {
                *v = normal_logpdf(y[i], xb[i] + state.psi[i], state.nu2);
            }
            loglik.push_row(&ll_row)?;
            total_d.push(gaussian_loglik(n_cells, ssr, state.nu2));
            for (s, v) in psi_sum.iter_mut().zip(&state.psi) {
                *s += v;
            }
            nu2_d.push(state.nu2);
            tau2_d.push(state.tau2);
            rho_d.push(state.rho_s);
            r1_d.push(state.rho1);
            r2_d.push(state.rho2);
        }
    }
    loglik.finish()?;
    let nd = nu2_d.len().max(1) as f64;
    Ok(StFit {
        columns: design.columns.clone(),
        n_units: k,
        n_times,
        seed: mcmc.seed,
        beta: DMatrix::from_row_slice(n, p, &beta_d),
        nu2: nu2_d,
        tau2: tau2_d,
        rho_s: rho_d,
        rho1: r1_d,
        rho2: r2_d,
        psi_mean: psi_sum.into_iter().map(|s| s / nd).collect(),
        loglik,
        total_loglik: total_d,
        rho_acceptance: adapter.acceptance_rate(),
        rho_step: adapter.step,
        temporal_fallbacks: fallbacks,
    })
}
