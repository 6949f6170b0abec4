//! Hit-and-run, slice and lazy random walk Metropolis samplers, with an exact
//! finite-state lab and Monte Carlo diagnostics for the covariance ordering
//! `M >= U >= H` and `M >= U >= S`.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aux_framework;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod operator_lab;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod stats;
pub mod targets;

pub use error::{Error, Result};
