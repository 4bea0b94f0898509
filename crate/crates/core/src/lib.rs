//! Bayesian samplers for two-stage exposure/health models.
//!
//! A first-stage model produces an `n × m` ensemble of posterior predictive
//! exposure draws. The samplers here fit a second-stage regression of a health
//! outcome on the unknown true exposure while propagating the ensemble's
//! uncertainty with one of seven methods: plug-in, multiple imputation (MI),
//! the single-chain MI approximation (MIA), a discrete uniform prior over
//! ensemble columns (DU), a multivariate normal prior (MVN), and univariate or
//! multivariate Gaussian kernel density priors (UKDE, MKDE).
//!
//! Gaussian, Bernoulli-logit and negative-binomial-logit outcomes are
//! supported; the latter two through Pólya-Gamma augmentation, which gives
//! every exposure update the same conditionally Gaussian form.

// `!(x > 0.0)` deliberately rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod distributions;
pub mod error;
pub mod io;
pub mod mcmc;
pub mod model;
pub mod rng;
pub mod stats;
pub mod updaters;

pub use error::{Error, Result};
pub use rng::RandomSource;
