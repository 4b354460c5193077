//! Asymptotic training and generalization errors of random feature models,
//! and finite-size Monte Carlo experiments to check them.
//!
//! The theory engine solves a scalar min-max problem whose optimizer
//! `(ϑ, q, β)` determines both errors. The empirical engine samples feature
//! matrices and data, fits the second layer by regularised ERM and measures
//! the same quantities.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod ensemble;
pub mod experiment;
pub mod losses;
pub mod predict;
pub mod quadrature;
pub mod saddle;
pub mod spectral;
pub mod teacher;
