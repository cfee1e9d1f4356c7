//! Diversified mini-batch SGD.
//!
//! Mini-batches are drawn from a k-DPP over the training set: a distribution
//! over size-`k` subsets with probability proportional to `det(L_Y)` for a
//! similarity kernel `L`. Similar examples rarely share a batch, which
//! rebalances skewed data and can lower gradient variance.
//!
//! - [`kernels`] builds `L` from features, labels or strata.
//! - [`eigen`] factorizes it.
//! - [`kdpp`] samples batches and computes inclusion marginals.
//! - [`trainer`] runs biased and unbiased DM-SGD plus baselines.
//! - [`analysis`] checks variance and balance claims by enumeration.

// Comparisons like `!(x > 0.0)` are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod eigen;
pub mod error;
pub mod io;
pub mod kdpp;
pub mod kernels;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
