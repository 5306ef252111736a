#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Estimation of heterogeneous production functions from firm panels.
//!
//! The pipeline: load a balanced panel ([`panel`]), pick a model family
//! ([`model`]), discretize the parameter space into types ([`grid`]),
//! evaluate the firm x type log-density matrix in blocks ([`likelihood`]),
//! find the coherent mixing distribution by fixed-point iteration
//! ([`solver`]), and post-process into per-firm posteriors, population
//! moments ([`posterior`]), and economics analytics ([`analytics`]).
//! [`sim`] generates synthetic panels for bias/MSE validation and [`ols`]
//! provides the per-firm OLS baseline.

pub mod analytics;
pub mod error;
pub mod grid;
pub mod likelihood;
pub mod model;
pub mod ols;
pub mod panel;
pub mod plot;
pub mod posterior;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
