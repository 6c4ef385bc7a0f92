//! Independent dense reference computations shared by integration tests.
#![allow(dead_code)]

use areal::graph::ArealGraph;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Erdős–Rényi graph on `k` units with at least one edge.
pub fn random_graph<R: Rng>(rng: &mut R, k: usize, p: f64) -> ArealGraph {
    assert!(k >= 2);
    let ids: Vec<String> = (0..k).map(|i| format!("u{i}")).collect();
    let mut edges = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if rng.random::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1));
    }
    ArealGraph::from_edges(ids, &edges).unwrap()
}

/// Moran's I with binary weights as the literal double sum.
pub fn brute_force_moran(values: &[f64], w: &DMatrix<f64>) -> f64 {
    let k = values.len();
    let ybar = values.iter().sum::<f64>() / k as f64;
    let mut s0 = 0.0;
    let mut cross = 0.0;
    for a in 0..k {
        for b in 0..k {
            s0 += w[(a, b)];
            cross += w[(a, b)] * (values[a] - ybar) * (values[b] - ybar);
        }
    }
    let ss: f64 = values.iter().map(|v| (v - ybar).powi(2)).sum();
    (k as f64 / s0) * cross / ss
}

/// Dense Q(ρ) = ρ(D − W) + (1 − ρ)I from the adjacency matrix.
pub fn dense_leroux(graph: &ArealGraph, rho: f64) -> DMatrix<f64> {
    let w = graph.dense_adjacency();
    let k = graph.len();
    let mut q = -rho * &w;
    for i in 0..k {
        q[(i, i)] = rho * w.row(i).sum() + 1.0 - rho;
    }
    q
}

/// Joint covariance of ψ (slice-major) under the AR(2) process with CAR
/// innovations, assembled as τ² A⁻¹ (I_T ⊗ Q⁻¹) A⁻ᵀ.
pub fn dense_st_covariance(graph: &ArealGraph, n_times: usize, rho_s: f64, rho1: f64, rho2: f64, tau2: f64) -> DMatrix<f64> {
    let k = graph.len();
    let n = k * n_times;
    let qinv = dense_leroux(graph, rho_s).try_inverse().unwrap();
    let mut a = DMatrix::zeros(n, n);
    let mut block = DMatrix::zeros(n, n);
    for t in 0..n_times {
        for i in 0..k {
            a[(t * k + i, t * k + i)] = 1.0;
            if t >= 1 {
                a[(t * k + i, (t - 1) * k + i)] = -rho1;
            }
            if t >= 2 {
                a[(t * k + i, (t - 2) * k + i)] = -rho2;
            }
            for j in 0..k {
                block[(t * k + i, t * k + j)] = qinv[(i, j)];
            }
        }
    }
    let ainv = a.try_inverse().unwrap();
    &ainv * block * ainv.transpose() * tau2
}

pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> f64 {
    let n = x.len();
    let chol = cov.clone().cholesky().expect("covariance positive definite");
    let d = DVector::from_iterator(n, x.iter().zip(mean).map(|(a, b)| a - b));
    let sol = chol.solve(&d);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + d.dot(&sol))
}

/// Gaussian conditioning by Schur complement: moments of the `keep` block
/// given the `given` block equals `values`.
pub fn condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    keep: &[usize],
    given: &[usize],
    values: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let sub = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov[(rows[i], cols[j])]);
    let s_kk = sub(keep, keep);
    let s_kg = sub(keep, given);
    let s_gg = sub(given, given);
    let s_gg_inv = s_gg.try_inverse().unwrap();
    let dev = DVector::from_iterator(given.len(), given.iter().zip(values).map(|(&g, v)| v - mean[g]));
    let m_k = DVector::from_iterator(keep.len(), keep.iter().map(|&i| mean[i]));
    let cond_mean = m_k + &s_kg * &s_gg_inv * dev;
    let cond_cov = s_kk - &s_kg * s_gg_inv * s_kg.transpose();
    (cond_mean, cond_cov)
}

/// Two-sided standard-normal critical value for a Bonferroni family.
pub fn bonferroni_z(family_alpha: f64, m: usize) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(1.0 - family_alpha / (2.0 * m as f64))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Chi-square statistic of `counts` against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum()
}
