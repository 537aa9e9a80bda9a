//! Relaxed batch A-optimal Bayesian experimental design for linear inverse
//! problems.
//!
//! A batch of `B` sensor locations is relaxed to a positive measure of total
//! mass `B` on the design domain. The expected utility of such a measure is
//! the negative trace of the Gaussian posterior covariance, which is concave
//! in the measure. This crate evaluates that utility together with its first
//! variation and spatial gradient, and optimizes it with interacting-particle
//! Wasserstein gradient flows, both plain and with per-ensemble variance and
//! inter-ensemble repulsion regularizers.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. The `parallel` feature evaluates per-particle quantities on the
//! rayon thread pool; results are collected in a fixed order, so trajectories
//! are bit-identical with and without it.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`kernels`] | covariance and interaction kernels with analytic gradients |
//! | [`models`] | observation maps: Poisson 1D, Schrödinger 2D, torus |
//! | [`prior`] | prior covariance on the parameter grid and its square root |
//! | [`design`] | weighted particle measures and ensemble products |
//! | [`utility`] | expected utility, first variation, posterior covariance |
//! | [`regularize`] | variance and repulsion regularizers |
//! | [`flow`] | particle gradient-flow drivers |
//! | [`certify`] | optimality certificate and runtime diagnostics |

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used deliberately so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod certify;
pub mod design;
pub mod error;
pub mod flow;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod prior;
pub mod regularize;
pub mod utility;

mod math;
mod par;

pub use error::{Error, Result};
