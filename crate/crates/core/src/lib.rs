//! Bayesian inference for areal (lattice) data.
//!
//! Builds contiguity graphs from polygons, assembles area-by-time panels and
//! design matrices, and fits Leroux CAR regressions and spatio-temporal
//! AR(2) CAR regressions by Gibbs/Metropolis sampling.

pub mod error;
pub mod esda;
pub mod eval;
pub mod graph;
pub mod leroux;
pub mod loglik;
pub mod pipeline;
pub mod rng;
pub mod sparse;
pub mod st;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use graph::ArealGraph;
