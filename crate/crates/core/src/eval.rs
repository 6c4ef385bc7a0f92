//! Model comparison, convergence diagnostics and stepwise selection.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esda::{self, Alternative, MoranResult, WeightScheme};
use crate::graph::ArealGraph;
use crate::leroux::{fit_spatial, LerouxFit, McmcConfig, PriorSpec};
use crate::loglik::PointwiseLogLik;
use crate::pipeline::Design;
use crate::rng::label_seed;
use crate::st::StFit;
use crate::stats::{mean, normal_logpdf, quantile};

/// (DIC, p_D) from per-draw deviances and the deviance at the posterior mean.
pub fn dic(deviances: &[f64], deviance_at_mean: f64) -> Result<(f64, f64)> {
    if deviances.len() < 2 {
        return Err(Error::Dimension("DIC needs at least 2 draws".into()));
    }
    if !deviance_at_mean.is_finite() || deviances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("deviance".into()));
    }
    let mean_dev = mean(deviances);
    let p_d = mean_dev - deviance_at_mean;
    Ok((mean_dev + p_d, p_d))
}

/// Streaming WAIC: per observation, a running log-sum-exp and a Welford
/// mean/variance of the log-likelihood over draws.
#[derive(Debug, Clone)]
pub struct WaicAccumulator {
    n_draws: usize,
    max: Vec<f64>,
    scaled_sum: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
    non_finite: bool,
}

impl WaicAccumulator {
    pub fn new(n_obs: usize) -> Self {
        WaicAccumulator {
            n_draws: 0,
            max: vec![f64::NEG_INFINITY; n_obs],
            scaled_sum: vec![0.0; n_obs],
            mean: vec![0.0; n_obs],
            m2: vec![0.0; n_obs],
            non_finite: false,
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.n_draws += 1;
        let n = self.n_draws as f64;
        for (i, &l) in row.iter().enumerate() {
            if !l.is_finite() {
                self.non_finite = true;
                continue;
            }
            if l > self.max[i] {
                self.scaled_sum[i] = self.scaled_sum[i] * (self.max[i] - l).exp() + 1.0;
                self.max[i] = l;
            } else {
                self.scaled_sum[i] += (l - self.max[i]).exp();
            }
            let delta = l - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (l - self.mean[i]);
        }
    }

    /// (WAIC, p_WAIC); p_WAIC uses the sample variance over draws.
    pub fn finish(&self) -> Result<(f64, f64)> {
        if self.n_draws < 2 {
            return Err(Error::Dimension("WAIC needs at least 2 draws".into()));
        }
        if self.non_finite {
            return Err(Error::NonFinite("pointwise log-likelihood".into()));
        }
        let s = self.n_draws as f64;
        let mut lppd = 0.0;
        let mut p_waic = 0.0;
        for i in 0..self.max.len() {
            lppd += self.max[i] + self.scaled_sum[i].ln() - s.ln();
            p_waic += self.m2[i] / (s - 1.0);
        }
        Ok((-2.0 * (lppd - p_waic), p_waic))
    }
}

/// (WAIC, p_WAIC) from a draws × observations matrix.
pub fn waic(loglik: &DMatrix<f64>) -> Result<(f64, f64)> {
    let mut acc = WaicAccumulator::new(loglik.ncols());
    let mut row = vec![0.0; loglik.ncols()];
    for r in 0..loglik.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = loglik[(r, j)];
        }
        acc.push(&row);
    }
    acc.finish()
}

pub fn waic_store(store: &PointwiseLogLik) -> Result<(f64, f64)> {
    let mut acc = WaicAccumulator::new(store.n_obs());
    store.for_each_row(|r| acc.push(r))?;
    acc.finish()
}

/// Per-parameter convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// NaN when degenerate.
    pub ess: f64,
    pub geweke_z: f64,
    pub rhat: f64,
    /// The chains have zero variance; ESS and R̂ are undefined.
    pub degenerate: bool,
}

fn autocovariance(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Effective sample size across chains by Geyer's initial positive sequence,
/// combining within-chain autocovariances with the between-chain variance.
/// `None` for constant input.
pub fn effective_sample_size(chains: &[&[f64]]) -> Option<f64> {
    let n = chains.iter().map(|c| c.len()).min()?;
    let m = chains.len();
    if n < 4 {
        return None;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, 0)).collect();
    let nf = n as f64;
    let w = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let between = if m > 1 { crate::stats::variance(&means) } else { 0.0 };
    let var_plus = w * (nf - 1.0) / nf + between;
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return None;
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = if lag == 0 {
            acov0.iter().sum::<f64>() / m as f64
        } else {
            chains
                .iter()
                .zip(&means)
                .map(|(c, &mu)| autocovariance(c, mu, lag))
                .sum::<f64>()
                / m as f64
        };
        1.0 - (w - mean_acov) / var_plus
    };
    let mut sum_pairs = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if !(pair > 0.0) {
            break;
        }
        pair = pair.min(prev);
        prev = pair;
        sum_pairs += pair;
        lag += 2;
    }
    let tau = -1.0 + 2.0 * sum_pairs;
    let tau = tau.max(1.0 / (m as f64 * nf).log10().max(1.0));
    Some(m as f64 * nf / tau)
}

/// Geweke z comparing the first 10% and the last 50% of a chain.
pub fn geweke_z(x: &[f64]) -> f64 {
    let n = x.len();
    let na = (n / 10).max(2);
    let nb = (n / 2).max(2);
    if na + nb > n {
        return f64::NAN;
    }
    let (a, b) = (&x[..na], &x[n - nb..]);
    let seg_var = |s: &[f64]| -> f64 {
        let v = crate::stats::variance(s);
        match effective_sample_size(&[s]) {
            Some(ess) => v / ess,
            None => 0.0,
        }
    };
    let denom = (seg_var(a) + seg_var(b)).sqrt();
    let diff = mean(a) - mean(b);
    if denom > 0.0 {
        diff / denom
    } else if diff == 0.0 {
        0.0
    } else {
        f64::NAN
    }
}

/// Split-chain potential scale reduction factor.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let Some(n) = chains.iter().map(|c| c.len()).min() else {
        return f64::NAN;
    };
    let half = n / 2;
    if half < 2 {
        return f64::NAN;
    }
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[n - half..n]);
    }
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let w = pieces.iter().map(|p| crate::stats::variance(p)).sum::<f64>() / pieces.len() as f64;
    let b_over_n = crate::stats::variance(&means);
    let h = half as f64;
    if !(w > 0.0) {
        return f64::NAN;
    }
    (((h - 1.0) / h * w + b_over_n) / w).sqrt()
}

/// ESS, Geweke z (first chain) and split R̂ of one parameter.
pub fn convergence(chains: &[&[f64]]) -> Convergence {
    match effective_sample_size(chains) {
        Some(ess) => Convergence {
            ess,
            geweke_z: chains.first().map_or(f64::NAN, |c| geweke_z(c)),
            rhat: split_rhat(chains),
            degenerate: false,
        },
        None => Convergence {
            ess: f64::NAN,
            geweke_z: f64::NAN,
            rhat: f64::NAN,
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
    pub geweke_z: f64,
    pub rhat: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub dic: f64,
    pub p_d: f64,
    pub waic: f64,
    pub p_waic: f64,
    pub parameters: Vec<ParameterSummary>,
}

/// Summaries of named parameters, each given as one trace per chain.
pub fn parameter_table(params: &[(String, Vec<&[f64]>)]) -> Vec<ParameterSummary> {
    params
        .iter()
        .map(|(name, chains)| {
            let pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
            let c = convergence(chains);
            ParameterSummary {
                name: name.clone(),
                mean: mean(&pooled),
                q025: quantile(&pooled, 0.025),
                q975: quantile(&pooled, 0.975),
                ess: c.ess,
                geweke_z: c.geweke_z,
                rhat: c.rhat,
                degenerate: c.degenerate,
            }
        })
        .collect()
}

fn fmt(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        "NA".to_string()
    }
}

impl FitSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// `parameter,mean,q2.5,q97.5,ess` with fixed precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "parameter,mean,q2.5,q97.5,ess")?;
        for p in &self.parameters {
            writeln!(w, "{},{},{},{},{}", p.name, fmt(p.mean, 6), fmt(p.q025, 6), fmt(p.q975, 6), fmt(p.ess, 1))?;
        }
        Ok(())
    }

    /// `parameter,ess,geweke_z,rhat,degenerate`.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "parameter,ess,geweke_z,rhat,degenerate")?;
        for p in &self.parameters {
            writeln!(w, "{},{},{},{},{}", p.name, fmt(p.ess, 1), fmt(p.geweke_z, 4), fmt(p.rhat, 4), p.degenerate)?;
        }
        Ok(())
    }

    /// `criterion,value` rows for DIC, p_D, WAIC, p_WAIC.
    pub fn write_criteria_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "criterion,value")?;
        for (name, v) in [("dic", self.dic), ("p_d", self.p_d), ("waic", self.waic), ("p_waic", self.p_waic)] {
            writeln!(w, "{name},{}", fmt(v, 4))?;
        }
        Ok(())
    }
}

fn deviance_at(y: &[f64], mean_fit: &[f64], var: f64) -> f64 {
    -2.0 * y.iter().zip(mean_fit).map(|(a, m)| normal_logpdf(*a, *m, var)).sum::<f64>()
}

/// DIC and WAIC of one or more spatial chains, plug-in point the posterior
/// mean of (β, φ, ν²).
pub fn spatial_criteria(chains: &[LerouxFit], y: &[f64], x: &DMatrix<f64>) -> Result<(f64, f64, f64, f64)> {
    let total: usize = chains.iter().map(|c| c.n_draws()).sum();
    if total == 0 {
        return Err(Error::Dimension("no draws".into()));
    }
    let k = y.len();
    let mut beta = DVector::zeros(x.ncols());
    let mut phi = vec![0.0; k];
    let mut nu2 = 0.0;
    let mut deviances = Vec::with_capacity(total);
    let mut acc = WaicAccumulator::new(k);
    for c in chains {
        for d in 0..c.n_draws() {
            beta += c.beta.row(d).transpose();
            for (p, v) in phi.iter_mut().zip(c.phi.row(d).iter()) {
                *p += v;
            }
            nu2 += c.nu2[d];
            deviances.push(-2.0 * c.total_loglik[d]);
            let row: Vec<f64> = c.loglik.row(d).iter().copied().collect();
            acc.push(&row);
        }
    }
    let nt = total as f64;
    let xb = x * (beta / nt);
    let mean_fit: Vec<f64> = (0..k).map(|i| xb[i] + phi[i] / nt).collect();
    let (dic, p_d) = dic(&deviances, deviance_at(y, &mean_fit, nu2 / nt))?;
    let (waic, p_waic) = acc.finish()?;
    Ok((dic, p_d, waic, p_waic))
}

pub fn summarize_spatial(chains: &[LerouxFit], y: &[f64], x: &DMatrix<f64>) -> Result<FitSummary> {
    let (dic, p_d, waic, p_waic) = spatial_criteria(chains, y, x)?;
    let traces: Vec<Vec<(String, Vec<f64>)>> = chains.iter().map(|c| c.parameter_draws()).collect();
    let params: Vec<(String, Vec<&[f64]>)> = traces[0]
        .iter()
        .enumerate()
        .map(|(j, (name, _))| (name.clone(), traces.iter().map(|t| t[j].1.as_slice()).collect()))
        .collect();
    Ok(FitSummary {
        dic,
        p_d,
        waic,
        p_waic,
        parameters: parameter_table(&params),
    })
}

pub fn summarize_st(fit: &StFit, y: &[f64], x: &DMatrix<f64>) -> Result<FitSummary> {
    let deviances: Vec<f64> = fit.total_loglik.iter().map(|l| -2.0 * l).collect();
    let nu2 = mean(&fit.nu2);
    let d_mean = deviance_at(y, &fit.fitted_mean(x), nu2);
    let (dic, p_d) = dic(&deviances, d_mean)?;
    let (waic, p_waic) = waic_store(&fit.loglik)?;
    let traces = fit.parameter_draws();
    let params: Vec<(String, Vec<&[f64]>)> =
        traces.iter().map(|(n, v)| (n.clone(), vec![v.as_slice()])).collect();
    Ok(FitSummary {
        dic,
        p_d,
        waic,
        p_waic,
        parameters: parameter_table(&params),
    })
}

/// Moran's I of posterior-mean residuals (one-sided, positive
/// autocorrelation alternative).
pub fn residual_moran(
    residuals: &[f64],
    graph: &ArealGraph,
    scheme: WeightScheme,
    n_permutations: usize,
    seed: u64,
) -> Result<MoranResult> {
    esda::permutation_pvalue(residuals, graph, scheme, n_permutations, seed, Alternative::Greater)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Dic,
    Waic,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dic" => Ok(Criterion::Dic),
            "waic" => Ok(Criterion::Waic),
            other => Err(Error::Config(format!("unknown criterion `{other}` (expected dic or waic)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepAction {
    Start,
    Add,
    Drop,
}

impl std::fmt::Display for StepAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StepAction::Start => "start",
            StepAction::Add => "add",
            StepAction::Drop => "drop",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub action: StepAction,
    pub predictor: Option<String>,
    pub dic: f64,
    pub waic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen predictors in candidate order.
    pub chosen: Vec<String>,
    pub trace: Vec<StepRecord>,
}

impl Selection {
    /// `step,action,predictor,dic,waic`.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,action,predictor,dic,waic")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step,
                r.action,
                r.predictor.as_deref().unwrap_or(""),
                fmt(r.dic, 4),
                fmt(r.waic, 4)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseOptions {
    pub criterion: Criterion,
    /// Minimum criterion decrease for a move to be accepted.
    pub threshold: f64,
}

impl Default for StepwiseOptions {
    fn default() -> Self {
        StepwiseOptions {
            criterion: Criterion::Dic,
            threshold: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scores {
    dic: f64,
    waic: f64,
}

impl Scores {
    fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Dic => self.dic,
            Criterion::Waic => self.waic,
        }
    }
}

/// Seed used for the fit of a predictor subset.
pub fn subset_seed(seed: u64, subset: &[String]) -> u64 {
    let mut names = subset.to_vec();
    names.sort();
    label_seed(seed, &names.join("\u{1f}"))
}

fn score_subset(
    y: &[f64],
    candidates: &[(String, Vec<f64>)],
    included: &[bool],
    graph: &ArealGraph,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<Scores> {
    let k = y.len();
    let mut cols = vec![("Intercept".to_string(), vec![1.0; k])];
    cols.extend(
        candidates
            .iter()
            .zip(included)
            .filter(|(_, &inc)| inc)
            .map(|((n, v), _)| (n.clone(), v.clone())),
    );
    let names: Vec<String> = cols[1..].iter().map(|(n, _)| n.clone()).collect();
    let wrap = |e: Error| Error::SubsetFit {
        subset: names.clone(),
        source: Box::new(e),
    };
    let design = Design::from_columns(k, 1, cols).map_err(wrap)?;
    let cfg = McmcConfig {
        seed: subset_seed(config.seed, &names),
        ..config.clone()
    };
    let hyper = prior.expand(design.n_columns());
    let fit = fit_spatial(y, &design, graph, &hyper, &cfg).map_err(wrap)?;
    let (dic, _, waic, _) = spatial_criteria(std::slice::from_ref(&fit), y, &design.matrix).map_err(wrap)?;
    Ok(Scores { dic, waic })
}

/// Greedy bidirectional selection from the intercept-only model. Each step
/// refits every single add/drop move in parallel and keeps the best one if
/// it lowers the criterion by more than the threshold.
pub fn stepwise_select(
    y: &[f64],
    candidates: &[(String, Vec<f64>)],
    graph: &ArealGraph,
    prior: &PriorSpec,
    config: &McmcConfig,
    options: &StepwiseOptions,
) -> Result<Selection> {
    let mut included = vec![false; candidates.len()];
    let mut cache: HashMap<Vec<bool>, Scores> = HashMap::new();
    let current = score_subset(y, candidates, &included, graph, prior, config)?;
    cache.insert(included.clone(), current);
    let mut current = current;
    let mut trace = vec![StepRecord {
        step: 0,
        action: StepAction::Start,
        predictor: None,
        dic: current.dic,
        waic: current.waic,
    }];
    loop {
        let moves: Vec<Vec<bool>> = (0..candidates.len())
            .map(|j| {
                let mut m = included.clone();
                m[j] = !m[j];
                m
            })
            .collect();
        let todo: Vec<&Vec<bool>> = moves.iter().filter(|m| !cache.contains_key(*m)).collect();
        let scored: Vec<Result<Scores>> = todo
            .par_iter()
            .map(|m| score_subset(y, candidates, m, graph, prior, config))
            .collect();
        for (m, s) in todo.into_iter().zip(scored) {
            cache.insert(m.clone(), s?);
        }
        let best = moves
            .iter()
            .enumerate()
            .map(|(j, m)| (j, cache[m]))
            .min_by(|a, b| a.1.get(options.criterion).total_cmp(&b.1.get(options.criterion)));
        let Some((j, scores)) = best else { break };
        if current.get(options.criterion) - scores.get(options.criterion) <= options.threshold {
            break;
        }
        let action = if included[j] { StepAction::Drop } else { StepAction::Add };
        included[j] = !included[j];
        current = scores;
        trace.push(StepRecord {
            step: trace.len(),
            action,
            predictor: Some(candidates[j].0.clone()),
            dic: scores.dic,
            waic: scores.waic,
        });
    }
    let chosen = candidates
        .iter()
        .zip(&included)
        .filter(|(_, &inc)| inc)
        .map(|((n, _), _)| n.clone())
        .collect();
    Ok(Selection { chosen, trace })
}
