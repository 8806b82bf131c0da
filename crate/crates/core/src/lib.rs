//! Estimation of conditional probability tables for an ordinal child with
//! ordinal parents, under qualitative-influence constraints.
//!
//! A positive influence of every parent means the child's distribution is
//! stochastically increasing in the product order of parent configurations:
//! `x ⪯ x' ⇒ F(y|x) ≥ F(y|x')` for every child value `y`. Three estimators
//! are provided:
//!
//! * the standard (unconstrained) estimator, [`estimators::standard_mle`];
//! * the isotonic-regression estimator, [`estimators::isotonic_estimator`],
//!   which projects each empirical CDF level onto the antitonic cone;
//! * the constrained maximum-likelihood estimator, [`cml_mixture::em_fit`],
//!   via EM over the monotone point-mass labelings.
//!
//! [`experiments`] runs the simulation and hold-out comparisons, and
//! [`dataset`] turns CSV files into count tables.

pub mod cml_mixture;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod lattice;
pub mod metrics;
mod nnls;
pub mod pav;
pub mod product_iso;

pub use error::{Error, Result};
