//! Bayesian inference engine for hierarchical dynamic beta regression on
//! balanced panels of bounded scores.
//!
//! The observation model is a beta distribution in the mean/precision
//! parametrization, with the mean logit-linked and the log precision
//! negatively linked to covariates; regression coefficients follow a
//! hierarchical dynamic prior (per-level coefficients centered on global
//! means that evolve as Gaussian random walks). Five nested precision
//! structures (M1-M5) and a normal-on-logit baseline are supported.
//!
//! The crate provides:
//!
//! - [`data`]: balanced panel container, design-matrix construction, CSV I/O;
//! - [`standardize`]: bounded-score standardization into (0,1) responses;
//! - [`design`]: Dalenius-Hodges stratification and seeded stratified
//!   sampling with certainty strata and panel retention;
//! - [`model`]: links, densities, likelihood and prior evaluation;
//! - [`mcmc`]: a Metropolis-within-Gibbs sampler with adaptive proposal
//!   scaling, thinning, and deterministic seeded streams;
//! - [`diagnostics`]: ESS, Geweke z-scores, potential scale reduction;
//! - [`selection`]: DIC, ranked probability score, logarithmic score, and
//!   posterior predictive summaries;
//! - [`simulate`]: synthetic panel generation for recovery experiments;
//! - [`store`]: the flat chain CSV format.

pub mod data;
pub mod design;
pub mod diagnostics;
pub mod error;
pub mod mcmc;
pub mod model;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod special;
pub mod standardize;
pub mod store;
pub mod warmstart;

pub use error::{Error, Result};
