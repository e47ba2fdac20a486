//! Budget-optimal two-phase sampling designs for estimating a population mean
//! when the first-phase sample (an EHR cohort) is selection-biased.
//!
//! The crate is organized around the workflow:
//!
//! 1. [`datamodel`] describes the multi-phase sample and generates synthetic
//!    populations for simulation studies.
//! 2. [`regress`] fits the outcome mean and log-linear variance models from
//!    pilot data, plus the logistic and beta regressions used by
//!    [`selection`] to model the first-phase inclusion probability.
//! 3. [`design`] solves for the optimal second-phase inclusion rule under a
//!    budget and evaluates its efficiency.
//! 4. [`estimator`] computes the doubly-robust augmented IPW estimate of the
//!    mean with bootstrap inference.
//! 5. [`simharness`] runs the end-to-end Monte Carlo comparison of designs.
//!
//! Data-parallel loops (replications, bootstrap resamples, grid searches) go
//! through [`exec`], which uses rayon when the `parallel` feature is enabled
//! and falls back to plain iteration otherwise.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datamodel;
pub mod design;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod linalg;
pub mod regress;
pub mod rng;
pub mod selection;
pub mod simharness;
pub mod special;

pub use error::{Error, Result};
