//! Forward simulation of CAR fields and of the spatial and spatio-temporal
//! regression models.
//!
//! Streams of the scenario seed: 0 predictors, 1 random effects, 2 noise.

use chrono::NaiveDate;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::pipeline::{AreaPanel, Design, PanelDate, TransformKind};
use crate::rng::{std_normal, stream_rng};
use crate::sparse::EnvelopeCholesky;
use crate::st::in_stationarity_triangle;

/// Repeated draws from N(0, τ² Q(ρ)⁻¹) with one factorization of Q.
#[derive(Debug, Clone)]
pub struct CarFieldSampler {
    chol: EnvelopeCholesky,
    sd: f64,
}

impl CarFieldSampler {
    pub fn new(graph: &ArealGraph, rho: f64, tau2: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {rho}")));
        }
        if !(tau2 >= 0.0) {
            return Err(Error::Config(format!("tau2 must be non-negative, got {tau2}")));
        }
        let mut chol = EnvelopeCholesky::for_graph(graph);
        let diag: Vec<f64> = (0..graph.len())
            .map(|k| rho * graph.degree(k) as f64 + 1.0 - rho)
            .collect();
        chol.factor(&diag, -rho).map_err(|f| Error::Factorization {
            k: graph.len(),
            rho,
            reason: format!("non-positive pivot {} at unit {}", f.pivot, f.unit),
        })?;
        Ok(CarFieldSampler { chol, sd: tau2.sqrt() })
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let k = self.chol.dim();
        let z: Vec<f64> = (0..k).map(|_| std_normal(rng)).collect();
        let zero = vec![0.0; k];
        self.chol.gaussian_draw(&zero, &z).into_iter().map(|v| v * self.sd).collect()
    }
}

/// One draw from N(0, τ² Q(ρ)⁻¹), deterministic in `seed`.
pub fn sample_car_field(graph: &ArealGraph, rho: f64, tau2: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, 1);
    Ok(CarFieldSampler::new(graph, rho, tau2)?.draw(&mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    /// Coefficients; the first multiplies the intercept, the rest iid
    /// standard-normal predictors `x1, x2, ...`.
    pub beta: Vec<f64>,
    pub nu2: f64,
    pub tau2: f64,
    /// ρ (spatial model) or ρ_S.
    pub rho: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub n_times: usize,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            beta: vec![1.0, 0.8, -0.5],
            nu2: 0.1,
            tau2: 0.15,
            rho: 0.6,
            rho1: -0.172,
            rho2: 0.292,
            n_times: 1,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.beta.is_empty() {
            return Err(Error::Config("scenario needs at least an intercept coefficient".into()));
        }
        if !(self.nu2 >= 0.0 && self.tau2 >= 0.0) {
            return Err(Error::Config("variances must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1), got {}", self.rho)));
        }
        if self.n_times == 0 {
            return Err(Error::Config("n_times must be at least 1".into()));
        }
        Ok(())
    }

    fn predictor_names(&self) -> Vec<String> {
        std::iter::once("Intercept".to_string())
            .chain((1..self.beta.len()).map(|j| format!("x{j}")))
            .collect()
    }

    fn design(&self, k: usize, n_times: usize) -> Result<Design> {
        let rows = k * n_times;
        let mut rng = stream_rng(self.seed, 0);
        let names = self.predictor_names();
        let mut cols = vec![(names[0].clone(), vec![1.0; rows])];
        for name in &names[1..] {
            cols.push((name.clone(), (0..rows).map(|_| std_normal(&mut rng)).collect()));
        }
        Design::from_columns(k, n_times, cols)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialTruth {
    pub beta: Vec<f64>,
    pub phi: Vec<f64>,
    pub nu2: f64,
    pub tau2: f64,
    pub rho: f64,
}

#[derive(Debug, Clone)]
pub struct SpatialDataset {
    pub y: Vec<f64>,
    pub design: Design,
    pub truth: SpatialTruth,
}

fn add_noise(mean: &[f64], nu2: f64, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 2);
    let sd = nu2.sqrt();
    mean.iter().map(|m| m + sd * std_normal(&mut rng)).collect()
}

/// y = Xβ + φ + ε with φ ~ N(0, τ² Q(ρ)⁻¹), ε ~ N(0, ν² I).
pub fn generate_spatial_dataset(graph: &ArealGraph, scenario: &SimScenario) -> Result<SpatialDataset> {
    scenario.validate()?;
    if scenario.n_times != 1 {
        return Err(Error::Config("spatial scenarios need n_times = 1".into()));
    }
    let k = graph.len();
    let design = scenario.design(k, 1)?;
    let phi = sample_car_field(graph, scenario.rho, scenario.tau2, scenario.seed)?;
    let xb = &design.matrix * DVector::from_column_slice(&scenario.beta);
    let mean: Vec<f64> = (0..k).map(|i| xb[i] + phi[i]).collect();
    let y = add_noise(&mean, scenario.nu2, scenario.seed);
    Ok(SpatialDataset {
        y,
        design,
        truth: SpatialTruth {
            beta: scenario.beta.clone(),
            phi,
            nu2: scenario.nu2,
            tau2: scenario.tau2,
            rho: scenario.rho,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StTruth {
    pub beta: Vec<f64>,
    /// K·T, slice-major
    pub psi: Vec<f64>,
    pub nu2: f64,
    pub tau2: f64,
    pub rho_s: f64,
    pub rho1: f64,
    pub rho2: f64,
}

#[derive(Debug, Clone)]
pub struct StDataset {
    pub y: Vec<f64>,
    pub design: Design,
    pub truth: StTruth,
}

/// AR(2) random-effect slices with CAR innovations:
/// ψ_1 = e_1, ψ_2 = ρ1ψ_1 + e_2, ψ_t = ρ1ψ_t−1 + ρ2ψ_t−2 + e_t.
pub fn generate_ar2_effects(
    graph: &ArealGraph,
    n_times: usize,
    rho_s: f64,
    rho1: f64,
    rho2: f64,
    tau2: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !in_stationarity_triangle(rho1, rho2) {
        return Err(Error::NonStationary { rho1, rho2 });
    }
    let k = graph.len();
    let sampler = CarFieldSampler::new(graph, rho_s, tau2)?;
    let mut rng = stream_rng(seed, 1);
    let mut psi = Vec::with_capacity(k * n_times);
    for t in 0..n_times {
        let e = sampler.draw(&mut rng);
        for (i, ei) in e.into_iter().enumerate() {
            let mut v = ei;
            if t >= 1 {
                v += rho1 * psi[(t - 1) * k + i];
            }
            if t >= 2 {
                v += rho2 * psi[(t - 2) * k + i];
            }
            psi.push(v);
        }
    }
    Ok(psi)
}

/// Slice-major panel y_kt = x_ktᵀB + ψ_kt + ε_kt.
pub fn generate_st_dataset(graph: &ArealGraph, scenario: &SimScenario) -> Result<StDataset> {
    scenario.validate()?;
    let (k, t) = (graph.len(), scenario.n_times);
    let psi = generate_ar2_effects(graph, t, scenario.rho, scenario.rho1, scenario.rho2, scenario.tau2, scenario.seed)?;
    let design = scenario.design(k, t)?;
    let xb = &design.matrix * DVector::from_column_slice(&scenario.beta);
    let mean: Vec<f64> = (0..k * t).map(|i| xb[i] + psi[i]).collect();
    let y = add_noise(&mean, scenario.nu2, scenario.seed);
    Ok(StDataset {
        y,
        design,
        truth: StTruth {
            beta: scenario.beta.clone(),
            psi,
            nu2: scenario.nu2,
            tau2: scenario.tau2,
            rho_s: scenario.rho,
            rho1: scenario.rho1,
            rho2: scenario.rho2,
        },
    })
}

/// Packs a simulated response and design (without the intercept) into a
/// panel. Single-slice data are dated with a year sentinel, panels with
/// consecutive days from 2022-01-01.
pub fn dataset_panel(graph: &ArealGraph, y: &[f64], design: &Design, response: &str) -> Result<AreaPanel> {
    let dates = if design.n_times == 1 {
        vec![PanelDate::Year(2022)]
    } else {
        let start = NaiveDate::from_ymd_opt(2022, 1, 1).expect("valid date");
        start.iter_days().take(design.n_times).map(PanelDate::Day).collect()
    };
    let mut panel = AreaPanel::new(graph.unit_ids().to_vec(), dates)?;
    panel.insert(response, y.to_vec(), TransformKind::None)?;
    for (j, name) in design.columns.iter().enumerate() {
        if Some(j) == design.intercept_column() {
            continue;
        }
        panel.insert(name, design.matrix.column(j).iter().copied().collect(), TransformKind::None)?;
    }
    Ok(panel)
}
