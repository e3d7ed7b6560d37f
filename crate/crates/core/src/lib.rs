//! Online Bayesian learning over generalized-linear models with flat,
//! heavy-tailed, hierarchical, and sparsity-inducing priors — together with
//! the machinery to certify it: closed-form regret bounds, KL divergences,
//! batch comparators, and PAC-Bayes risk certificates.
//!
//! The crate is organized bottom-up:
//!
//! * [`likelihoods`] — per-example losses for Gaussian regression and
//!   binary/multi-class logistic models, plus curvature constants.
//! * [`priors`] — prior families (isotropic/hierarchical Gaussian,
//!   multivariate-t, spike-and-slab, Laplace) with densities, samplers, and
//!   structured covariance algebra.
//! * [`divergences`] — exact and upper-bound KL divergences between a
//!   Gaussian posterior surrogate and each prior family, plus a Monte-Carlo
//!   estimator used as an oracle.
//! * [`bounds`] — closed-form cumulative-regret bounds, each reported term
//!   by term with its variational choices, plus comparisons between
//!   hierarchical and flat modeling.
//! * [`online`] — sequential Bayesian prediction: exact conjugate updates,
//!   exact support enumeration for spike-and-slab, scale-mixture quadrature
//!   for t priors, and a sequential Monte Carlo fallback for the rest.
//! * [`comparator`] — batch loss minimizers (unconstrained, norm-ball
//!   constrained, and best-sparse) the regret is measured against.
//! * [`risk`] — PAC-Bayes risk certificates for bounded losses and the
//!   coverage experiment that stress-tests them.
//! * [`data`] — deterministic synthetic data generation honoring the
//!   unit-norm feature contract, with multi-source schedules.

pub mod bounds;
pub mod comparator;
pub mod data;
pub mod divergences;
pub mod error;
pub mod likelihoods;
pub mod math;
pub mod online;
pub mod priors;
pub mod risk;

pub use error::{Error, Result};
