//! Gibbs/Metropolis sampler for the Leroux CAR spatial regression
//!
//! ```text
//! y_k | μ_k        ~ N(μ_k, ν²),          μ_k = x_kᵀβ + φ_k
//! β                ~ N(μ_β, Σ_β)          (Σ_β diagonal)
//! φ                ~ N(0, τ² Q(ρ)⁻¹),     Q(ρ) = ρ(D − W) + (1 − ρ)I
//! ν² ~ IG(a1, b1),  τ² ~ IG(a2, b2),  ρ ~ U(0, 1)
//! ```
//!
//! One iteration updates β, sweeps φ site by site, draws ν² and τ², and
//! makes a logit-scale random-walk Metropolis move on ρ. The block kernels
//! here are shared with the spatio-temporal sampler in [`crate::st`].

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::pipeline::Design;
use crate::rng::{inverse_gamma, open_unit, std_normal, stream_rng, SimRng};
use crate::stats::normal_logpdf;

/// Scalar hyperprior settings, expanded to a coefficient count with
/// [`PriorSpec::expand`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub beta_mean: f64,
    pub beta_var: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            a1: 1.0,
            b1: 0.01,
            a2: 1.0,
            b2: 0.01,
            beta_mean: 0.0,
            beta_var: 100_000.0,
        }
    }
}

impl PriorSpec {
    pub fn expand(&self, p: usize) -> Hyperpriors {
        Hyperpriors {
            a1: self.a1,
            b1: self.b1,
            a2: self.a2,
            b2: self.b2,
            beta_mean: vec![self.beta_mean; p],
            beta_var: vec![self.beta_var; p],
        }
    }
}

/// ν² ~ IG(a1, b1), τ² ~ IG(a2, b2), β ~ N(beta_mean, diag(beta_var)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperpriors {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub beta_mean: Vec<f64>,
    pub beta_var: Vec<f64>,
}

impl Hyperpriors {
    pub fn validate(&self, p: usize) -> Result<()> {
        for (name, v) in [("a1", self.a1), ("b1", self.b1), ("a2", self.a2), ("b2", self.b2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("hyperprior {name} must be positive, got {v}")));
            }
        }
        if self.beta_mean.len() != p || self.beta_var.len() != p {
            return Err(Error::Dimension(format!(
                "coefficient prior has length {}/{}, design has {p} columns",
                self.beta_mean.len(),
                self.beta_var.len()
            )));
        }
        if self.beta_var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Config("coefficient prior variances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial standard deviation of the logit-scale ρ proposal.
    pub rho_step: f64,
    /// Adapt the ρ step toward 40% acceptance during burn-in.
    pub adapt: bool,
    /// Mean-center the random effects after each sweep, folding the mean
    /// into the intercept (only when the design has an intercept column).
    pub center_effects: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iterations: 22_000,
            burn_in: 2_000,
            thin: 10,
            seed: 1,
            rho_step: 0.5,
            adapt: true,
            center_effects: true,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.rho_step > 0.0) {
            return Err(Error::Config("rho_step must be positive".into()));
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thin
    }

    #[inline]
    pub(crate) fn retains(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1) % self.thin == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LerouxState {
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub nu2: f64,
    pub tau2: f64,
    pub rho: f64,
}

/// Sparse view of Q(ρ) = ρ(D − W) + (1 − ρ)I over a graph.
#[derive(Debug, Clone, Copy)]
pub struct LerouxPrecision<'g> {
    graph: &'g ArealGraph,
    rho: f64,
}

pub fn leroux_precision(graph: &ArealGraph, rho: f64) -> LerouxPrecision<'_> {
    LerouxPrecision { graph, rho }
}

impl LerouxPrecision<'_> {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    #[inline]
    pub fn diag(&self, k: usize) -> f64 {
        self.rho * self.graph.degree(k) as f64 + 1.0 - self.rho
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.graph.len()).map(|k| self.diag(k)).collect()
    }

    /// Common off-diagonal entry −ρ on every edge.
    pub fn offdiag(&self) -> f64 {
        -self.rho
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a == b {
            self.diag(a)
        } else if self.graph.is_adjacent(a, b) {
            -self.rho
        } else {
            0.0
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| self.diag(k) * x[k] - self.rho * self.graph.neighbor_sum(k, x))
            .collect()
    }

    /// xᵀQx from the Laplacian form and the sum of squares.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let lap = self.graph.laplacian_form(x);
        let sq: f64 = x.iter().map(|v| v * v).sum();
        self.rho * lap + (1.0 - self.rho) * sq
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.graph.len();
        DMatrix::from_fn(k, k, |a, b| self.get(a, b))
    }
}

/// log|Q(ρ)| = Σ log(ρλ_i + 1 − ρ) from Laplacian eigenvalues.
pub fn leroux_log_det(eigenvalues: &[f64], rho: f64) -> f64 {
    eigenvalues.iter().map(|&l| (rho * l + 1.0 - rho).ln()).sum()
}

/// Normalized log-density of φ ~ N(0, τ² Q(ρ)⁻¹).
pub fn leroux_log_density(
    phi: &[f64],
    graph: &ArealGraph,
    eigenvalues: &[f64],
    rho: f64,
    tau2: f64,
) -> f64 {
    let k = phi.len() as f64;
    let quad = leroux_precision(graph, rho).quad_form(phi);
    -0.5 * k * (2.0 * std::f64::consts::PI * tau2).ln() + 0.5 * leroux_log_det(eigenvalues, rho)
        - quad / (2.0 * tau2)
}

/// Names the columns of `x` that are linear combinations of earlier ones.
pub fn check_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut offending = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for q in &basis {
            let proj = q.dot(&v);
            v.axpy(-proj, q, 1.0);
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            offending.push(names.get(j).cloned().unwrap_or_else(|| format!("column {j}")));
        } else {
            basis.push(v / norm);
        }
    }
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(offending))
    }
}

/// Conjugate Gaussian update for regression coefficients with cached XᵀX.
#[derive(Debug, Clone)]
pub struct BetaSampler {
    xtx: DMatrix<f64>,
    prior_precision: DVector<f64>,
    prior_shift: DVector<f64>,
}

impl BetaSampler {
    pub fn new(x: &DMatrix<f64>, hyper: &Hyperpriors) -> Self {
        let prior_precision = DVector::from_iterator(x.ncols(), hyper.beta_var.iter().map(|v| 1.0 / v));
        let prior_shift = DVector::from_iterator(
            x.ncols(),
            hyper.beta_mean.iter().zip(&hyper.beta_var).map(|(m, v)| m / v),
        );
        BetaSampler {
            xtx: x.tr_mul(x),
            prior_precision,
            prior_shift,
        }
    }

    fn precision_and_shift(&self, x: &DMatrix<f64>, target: &[f64], nu2: f64) -> (DMatrix<f64>, DVector<f64>) {
        let mut precision = &self.xtx / nu2;
        for j in 0..precision.nrows() {
            precision[(j, j)] += self.prior_precision[j];
        }
        let xty = x.tr_mul(&DVector::from_column_slice(target));
        let shift = xty / nu2 + &self.prior_shift;
        (precision, shift)
    }

    /// Full-conditional mean and covariance given `target = y − effects`.
    pub fn conditional(&self, x: &DMatrix<f64>, target: &[f64], nu2: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (precision, shift) = self.precision_and_shift(x, target, nu2);
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::RankDeficient(vec!["coefficient precision".into()]))?;
        Ok((chol.solve(&shift), chol.inverse()))
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        x: &DMatrix<f64>,
        target: &[f64],
        nu2: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let (precision, shift) = self.precision_and_shift(x, target, nu2);
        let chol = Cholesky::new(precision)
            .ok_or_else(|| Error::RankDeficient(vec!["coefficient precision".into()]))?;
        let mean = chol.solve(&shift);
        let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
        let dev = chol
            .l()
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor is non-singular");
        Ok((mean + dev).iter().copied().collect())
    }
}

/// β full conditional: covariance (XᵀX/ν² + Σ_β⁻¹)⁻¹ and mean
/// cov·(Xᵀ(y − φ)/ν² + Σ_β⁻¹μ_β).
pub fn beta_full_conditional(
    state: &LerouxState,
    y: &[f64],
    x: &DMatrix<f64>,
    hyper: &Hyperpriors,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let target: Vec<f64> = y.iter().zip(&state.phi).map(|(a, b)| a - b).collect();
    BetaSampler::new(x, hyper).conditional(x, &target, state.nu2)
}

/// Mean and variance of one site's Gaussian full conditional.
///
/// `scale` multiplies the CAR prior precision (1 for the spatial model) and
/// `offset` is the additional prior linear term (Q·m)_k contributed by other
/// time slices (0 for the spatial model).
#[allow(clippy::too_many_arguments)]
#[inline]
pub fn site_conditional(
    graph: &ArealGraph,
    effects: &[f64],
    k: usize,
    data_resid: f64,
    scale: f64,
    offset: f64,
    rho: f64,
    tau2: f64,
    nu2: f64,
) -> (f64, f64) {
    let q_kk = rho * graph.degree(k) as f64 + 1.0 - rho;
    let nsum = graph.neighbor_sum(k, effects);
    let precision = scale * q_kk / tau2 + 1.0 / nu2;
    let linear = (scale * rho * nsum - offset) / tau2 + data_resid / nu2;
    (linear / precision, 1.0 / precision)
}

/// Sequential single-site Gibbs sweep over `effects`.
#[allow(clippy::too_many_arguments)]
pub fn site_sweep<R: Rng + ?Sized>(
    graph: &ArealGraph,
    effects: &mut [f64],
    data_resid: &[f64],
    scale: f64,
    offsets: Option<&[f64]>,
    rho: f64,
    tau2: f64,
    nu2: f64,
    rng: &mut R,
) {
    for k in 0..effects.len() {
        let off = offsets.map_or(0.0, |o| o[k]);
        let (mean, var) =
            site_conditional(graph, effects, k, data_resid[k], scale, off, rho, tau2, nu2);
        effects[k] = mean + var.sqrt() * std_normal(rng);
    }
}

/// Prior-only conditional of φ_k from the Leroux specification:
/// N(ρΣω φ_i / (ρΣω + 1 − ρ), τ² / (ρΣω + 1 − ρ)).
pub fn phi_prior_conditional(graph: &ArealGraph, phi: &[f64], k: usize, rho: f64, tau2: f64) -> (f64, f64) {
    let denom = rho * graph.degree(k) as f64 + 1.0 - rho;
    (rho * graph.neighbor_sum(k, phi) / denom, tau2 / denom)
}

/// Residual target y − Xβ.
pub fn data_residual(y: &[f64], x: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    let xb = x * DVector::from_column_slice(beta);
    y.iter().zip(xb.iter()).map(|(a, b)| a - b).collect()
}

/// One φ sweep followed by mean-centering (the removed mean is returned).
pub fn phi_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut LerouxState,
    y: &[f64],
    x: &DMatrix<f64>,
    graph: &ArealGraph,
    rng: &mut R,
) -> f64 {
    let resid = data_residual(y, x, &state.beta);
    site_sweep(graph, &mut state.phi, &resid, 1.0, None, state.rho, state.tau2, state.nu2, rng);
    center(&mut state.phi)
}

/// Subtracts and returns the mean.
pub fn center(v: &mut [f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
    m
}

/// (shape, scale) pairs of the ν² and τ² inverse-gamma full conditionals.
pub fn variance_conditionals(
    state: &LerouxState,
    y: &[f64],
    x: &DMatrix<f64>,
    graph: &ArealGraph,
    hyper: &Hyperpriors,
) -> ((f64, f64), (f64, f64)) {
    let k = y.len() as f64;
    let resid = data_residual(y, x, &state.beta);
    let ssr: f64 = resid.iter().zip(&state.phi).map(|(r, p)| (r - p).powi(2)).sum();
    let quad = leroux_precision(graph, state.rho).quad_form(&state.phi);
    (
        (hyper.a1 + k / 2.0, hyper.b1 + ssr / 2.0),
        (hyper.a2 + k / 2.0, hyper.b2 + quad / 2.0),
    )
}

pub fn variance_full_conditionals<R: Rng + ?Sized>(
    state: &LerouxState,
    y: &[f64],
    x: &DMatrix<f64>,
    graph: &ArealGraph,
    hyper: &Hyperpriors,
    rng: &mut R,
) -> (f64, f64) {
    let ((s1, r1), (s2, r2)) = variance_conditionals(state, y, x, graph, hyper);
    (inverse_gamma(rng, s1, r1), inverse_gamma(rng, s2, r2))
}

/// Log-density of ρ (flat prior) given `n_slices` independent CAR fields
/// whose summed Laplacian form is `lap` and summed squares `sq`.
pub fn rho_log_target(rho: f64, n_slices: usize, lap: f64, sq: f64, tau2: f64, eigenvalues: &[f64]) -> f64 {
    if !(rho > 0.0 && rho < 1.0) {
        return f64::NEG_INFINITY;
    }
    0.5 * n_slices as f64 * leroux_log_det(eigenvalues, rho)
        - (rho * lap + (1.0 - rho) * sq) / (2.0 * tau2)
}

#[inline]
fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log acceptance ratio of moving ρ from `current` to `proposal` under the
/// logit-scale random walk (includes the Jacobian ρ(1 − ρ)).
pub fn rho_log_acceptance(
    current: f64,
    proposal: f64,
    n_slices: usize,
    lap: f64,
    sq: f64,
    tau2: f64,
    eigenvalues: &[f64],
) -> f64 {
    if proposal == current {
        return 0.0;
    }
    let jac = |r: f64| r.ln() + (1.0 - r).ln();
    rho_log_target(proposal, n_slices, lap, sq, tau2, eigenvalues)
        - rho_log_target(current, n_slices, lap, sq, tau2, eigenvalues)
        + jac(proposal)
        - jac(current)
}

/// One random-walk Metropolis step for ρ on the logit scale.
#[allow(clippy::too_many_arguments)]
pub fn rho_metropolis<R: Rng + ?Sized>(
    rng: &mut R,
    rho: f64,
    n_slices: usize,
    lap: f64,
    sq: f64,
    tau2: f64,
    eigenvalues: &[f64],
    step: f64,
) -> (f64, bool) {
    let proposal = logistic(logit(rho) + step * std_normal(rng));
    let log_alpha = rho_log_acceptance(rho, proposal, n_slices, lap, sq, tau2, eigenvalues);
    let u = open_unit(rng);
    if log_alpha >= 0.0 || u.ln() < log_alpha {
        (proposal, true)
    } else {
        (rho, false)
    }
}

/// Batch adaptation of a proposal scale toward a target acceptance rate.
#[derive(Debug, Clone)]
pub(crate) struct StepAdapter {
    pub step: f64,
    target: f64,
    batch: usize,
    batch_accepts: usize,
    batch_len: usize,
    pub accepts: usize,
    pub proposals: usize,
}

impl StepAdapter {
    const BATCH: usize = 50;

    pub fn new(step: f64) -> Self {
        StepAdapter {
            step,
            target: 0.4,
            batch: 0,
            batch_accepts: 0,
            batch_len: 0,
            accepts: 0,
            proposals: 0,
        }
    }

    pub fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.batch_len += 1;
            self.batch_accepts += accepted as usize;
            if self.batch_len == Self::BATCH {
                self.batch += 1;
                let rate = self.batch_accepts as f64 / Self::BATCH as f64;
                let gain = (2.0 / (self.batch as f64).sqrt()).min(1.0);
                self.step = (self.step.ln() + gain * (rate - self.target)).exp().clamp(1e-3, 20.0);
                self.batch_len = 0;
                self.batch_accepts = 0;
            }
        } else {
            self.proposals += 1;
            self.accepts += accepted as usize;
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// Posterior draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LerouxFit {
    pub columns: Vec<String>,
    pub seed: u64,
    pub chain: u64,
    /// n_draws × p
    pub beta: DMatrix<f64>,
    /// n_draws × K
    pub phi: DMatrix<f64>,
    pub nu2: Vec<f64>,
    pub tau2: Vec<f64>,
    pub rho: Vec<f64>,
    /// n_draws × K pointwise log-likelihoods
    pub loglik: DMatrix<f64>,
    /// Per-draw data log-likelihood from the residual sum of squares.
    pub total_loglik: Vec<f64>,
    pub rho_acceptance: f64,
    pub rho_step: f64,
}

impl LerouxFit {
    pub fn n_draws(&self) -> usize {
        self.nu2.len()
    }

    pub fn beta_mean(&self) -> Vec<f64> {
        column_means(&self.beta)
    }

    pub fn phi_mean(&self) -> Vec<f64> {
        column_means(&self.phi)
    }

    /// Named scalar parameter traces: coefficients, then τ², ν², ρ.
    pub fn parameter_draws(&self) -> Vec<(String, Vec<f64>)> {
        let mut out: Vec<(String, Vec<f64>)> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, name)| (name.clone(), self.beta.column(j).iter().copied().collect()))
            .collect();
        out.push(("tau2".into(), self.tau2.clone()));
        out.push(("nu2".into(), self.nu2.clone()));
        out.push(("rho".into(), self.rho.clone()));
        out
    }
}

pub(crate) fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).mean()).collect()
}

/// Posterior-mean fitted values x_kᵀβ + φ_k and residuals y − fitted.
pub fn fitted_and_residuals(fit: &LerouxFit, y: &[f64], x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    if fit.n_draws() == 0 {
        return Err(Error::Dimension("fit has no draws".into()));
    }
    let xb = x * DVector::from_vec(fit.beta_mean());
    let fitted: Vec<f64> = xb.iter().zip(fit.phi_mean()).map(|(a, b)| a + b).collect();
    let resid = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok((fitted, resid))
}

/// Σ log N(r_i | 0, var) over n residuals with sum of squares `ssr`.
pub fn gaussian_loglik(n: usize, ssr: f64, var: f64) -> f64 {
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI * var).ln() - ssr / (2.0 * var)
}

pub(crate) fn check_finite(iteration: usize, name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            parameter: name.to_string(),
        })
    }
}

/// Least-squares coefficients and residual variance used to start chains.
pub(crate) fn least_squares_start(x: &DMatrix<f64>, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let xtx = x.tr_mul(x);
    let xty = x.tr_mul(&DVector::from_column_slice(y));
    let chol = Cholesky::new(xtx).ok_or_else(|| Error::RankDeficient(vec!["design".into()]))?;
    let beta: Vec<f64> = chol.solve(&xty).iter().copied().collect();
    let resid = data_residual(y, x, &beta);
    let n = y.len();
    let p = x.ncols();
    let ssr: f64 = resid.iter().map(|r| r * r).sum();
    let var = if n > p { ssr / (n - p) as f64 } else { crate::stats::variance(y) };
    let scale = if n > 1 { crate::stats::variance(y).max(1.0) } else { 1.0 };
    Ok((beta, var.max(1e-8 * scale)))
}

/// Cached per-graph quantities shared by every chain.
#[derive(Debug, Clone)]
pub struct SpatialCache {
    pub eigenvalues: Vec<f64>,
}

impl SpatialCache {
    pub fn new(graph: &ArealGraph) -> Result<Self> {
        Ok(SpatialCache {
            eigenvalues: graph.laplacian_eigenvalues()?,
        })
    }
}

fn validate_inputs(y: &[f64], design: &Design, graph: &ArealGraph, hyper: &Hyperpriors, config: &McmcConfig) -> Result<()> {
    config.validate()?;
    hyper.validate(design.n_columns())?;
    if y.len() != graph.len() || design.matrix.nrows() != graph.len() {
        return Err(Error::Dimension(format!(
            "y has {} entries and X {} rows for a graph of {} units",
            y.len(),
            design.matrix.nrows(),
            graph.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("response entry {i}")));
    }
    check_full_rank(&design.matrix, &design.columns)
}

/// Runs one chain (stream 0 of `config.seed`).
pub fn fit_spatial(
    y: &[f64],
    design: &Design,
    graph: &ArealGraph,
    hyper: &Hyperpriors,
    config: &McmcConfig,
) -> Result<LerouxFit> {
    validate_inputs(y, design, graph, hyper, config)?;
    let cache = SpatialCache::new(graph)?;
    run_chain(y, design, graph, hyper, config, &cache, 0)
}

/// Runs `n_chains` chains in parallel on streams 0..n_chains.
pub fn fit_spatial_chains(
    y: &[f64],
    design: &Design,
    graph: &ArealGraph,
    hyper: &Hyperpriors,
    config: &McmcConfig,
    n_chains: usize,
) -> Result<Vec<LerouxFit>> {
    validate_inputs(y, design, graph, hyper, config)?;
    let cache = SpatialCache::new(graph)?;
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| run_chain(y, design, graph, hyper, config, &cache, c))
        .collect()
}

/// One chain of the Gibbs/Metropolis cycle, advanced an iteration at a time.
/// The response is passed to every step so callers may change it between
/// iterations (successive-conditional simulation).
pub struct LerouxSampler<'a> {
    x: &'a DMatrix<f64>,
    graph: &'a ArealGraph,
    hyper: &'a Hyperpriors,
    eigenvalues: &'a [f64],
    beta_sampler: BetaSampler,
    intercept: Option<usize>,
    adapter: StepAdapter,
    config: McmcConfig,
    rng: SimRng,
    pub state: LerouxState,
}

/// Quantities from the last iteration reused for retention.
pub struct IterationOutput {
    /// Xβ
    pub xb: DVector<f64>,
    /// Σ(y − Xβ − φ)²
    pub ssr: f64,
}

impl<'a> LerouxSampler<'a> {
    /// Starts from least squares on `y` with φ = 0, ν² = τ² = residual
    /// variance and ρ = 0.5, drawing from stream `chain` of the seed.
    pub fn new(
        y: &[f64],
        design: &'a Design,
        graph: &'a ArealGraph,
        hyper: &'a Hyperpriors,
        config: &McmcConfig,
        cache: &'a SpatialCache,
        chain: u64,
    ) -> Result<Self> {
        let x = &design.matrix;
        let (beta, var0) = least_squares_start(x, y)?;
        Ok(LerouxSampler {
            x,
            graph,
            hyper,
            eigenvalues: &cache.eigenvalues,
            beta_sampler: BetaSampler::new(x, hyper),
            intercept: design.intercept_column().filter(|_| config.center_effects),
            adapter: StepAdapter::new(config.rho_step),
            config: config.clone(),
            rng: stream_rng(config.seed, chain),
            state: LerouxState {
                beta,
                phi: vec![0.0; graph.len()],
                nu2: var0,
                tau2: var0,
                rho: 0.5,
            },
        })
    }

    pub fn rho_step(&self) -> f64 {
        self.adapter.step
    }

    pub fn rho_acceptance(&self) -> f64 {
        self.adapter.acceptance_rate()
    }

    /// Updates β, φ, ν², τ², ρ in turn.
    pub fn step(&mut self, y: &[f64], it: usize) -> Result<IterationOutput> {
        let (x, graph, hyper) = (self.x, self.graph, self.hyper);
        let k = graph.len();
        let state = &mut self.state;
        let rng = &mut self.rng;

        let target: Vec<f64> = y.iter().zip(&state.phi).map(|(a, b)| a - b).collect();
        state.beta = self.beta_sampler.draw(x, &target, state.nu2, rng)?;
        check_finite(it, "beta", &state.beta)?;

        let resid = data_residual(y, x, &state.beta);
        site_sweep(graph, &mut state.phi, &resid, 1.0, None, state.rho, state.tau2, state.nu2, rng);
        if let Some(c) = self.intercept {
            let m = center(&mut state.phi);
            state.beta[c] += m;
        }
        check_finite(it, "phi", &state.phi)?;

        let xb = x * DVector::from_column_slice(&state.beta);
        let ssr: f64 = (0..k).map(|i| (y[i] - xb[i] - state.phi[i]).powi(2)).sum();
        state.nu2 = inverse_gamma(rng, hyper.a1 + k as f64 / 2.0, hyper.b1 + ssr / 2.0);
        check_finite(it, "nu2", &[state.nu2])?;

        let lap = graph.laplacian_form(&state.phi);
        let sq: f64 = state.phi.iter().map(|v| v * v).sum();
        let quad = state.rho * lap + (1.0 - state.rho) * sq;
        state.tau2 = inverse_gamma(rng, hyper.a2 + k as f64 / 2.0, hyper.b2 + quad / 2.0);
        check_finite(it, "tau2", &[state.tau2])?;

        let (rho, accepted) =
            rho_metropolis(rng, state.rho, 1, lap, sq, state.tau2, self.eigenvalues, self.adapter.step);
        state.rho = rho;
        self.adapter
            .record(accepted, self.config.adapt && it < self.config.burn_in);
        check_finite(it, "rho", &[state.rho])?;
        Ok(IterationOutput { xb, ssr })
    }
}

fn run_chain(
    y: &[f64],
    design: &Design,
    graph: &ArealGraph,
    hyper: &Hyperpriors,
    config: &McmcConfig,
    cache: &SpatialCache,
    chain: u64,
) -> Result<LerouxFit> {
    let (k, p) = (graph.len(), design.n_columns());
    let mut sampler = LerouxSampler::new(y, design, graph, hyper, config, cache, chain)?;

    let n = config.n_retained();
    let mut beta_draws = Vec::with_capacity(n * p);
    let mut phi_draws = Vec::with_capacity(n * k);
    let mut ll_draws = Vec::with_capacity(n * k);
    let (mut nu2_d, mut tau2_d, mut rho_d) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut total_d = Vec::with_capacity(n);

    for it in 0..config.n_iterations {
        let out = sampler.step(y, it)?;
        if config.retains(it) {
            let state = &sampler.state;
            beta_draws.extend_from_slice(&state.beta);
            phi_draws.extend_from_slice(&state.phi);
            let var = state.nu2;
            ll_draws.extend((0..k).map(|i| normal_logpdf(y[i], out.xb[i] + state.phi[i], var)));
            nu2_d.push(state.nu2);
            tau2_d.push(state.tau2);
            rho_d.push(state.rho);
            total_d.push(gaussian_loglik(k, out.ssr, state.nu2));
        }
    }

    Ok(LerouxFit {
        columns: design.columns.clone(),
        seed: config.seed,
        chain,
        beta: DMatrix::from_row_slice(n, p, &beta_draws),
        phi: DMatrix::from_row_slice(n, k, &phi_draws),
        nu2: nu2_d,
        tau2: tau2_d,
        rho: rho_d,
        loglik: DMatrix::from_row_slice(n, k, &ll_draws),
        total_loglik: total_d,
        rho_acceptance: sampler.rho_acceptance(),
        rho_step: sampler.rho_step(),
    })
}
