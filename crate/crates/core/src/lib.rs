//! Proximal causal inference (PCI) toolkit: average-treatment-effect
//! estimators that use treatment and outcome confounding proxies to adjust
//! for unobserved confounding, together with the simulation models, variance
//! machinery, and proxy diagnostics needed to study them.
//!
//! The crate is organized around a generic estimating-equation engine
//! ([`moments`]): every estimator is an M-estimator defined by a stacked
//! moment system, so point estimates and sandwich standard errors share one
//! code path. Bridge-function specifications live in [`bridges`], the
//! estimators in [`estimators`], simulation data-generating models with
//! known ground truth in [`dgm`], and empirical proxy checks in
//! [`diagnostics`].

pub mod bridges;
pub mod data;
pub mod dgm;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod moments;
pub mod rng;

pub use data::{read_csv, write_csv, ColumnRoles, Dataset};
pub use error::{Error, Result};
