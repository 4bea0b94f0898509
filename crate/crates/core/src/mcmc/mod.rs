//! Posterior samplers built on the exposure updates, plus the convergence
//! diagnostic.

mod geweke;
mod gibbs;
mod mi;
mod monte_carlo;
mod regression;
mod samples;

pub use geweke::{geweke_diagnostic, geweke_z, GewekeReport};
pub use gibbs::{run_gibbs, run_gibbs_fixed};
pub use mi::{run_mi, MiConfig};
pub use monte_carlo::{conjugate_flat_draws, run_monte_carlo_gaussian, ConjugateDraw};
pub use regression::{update_dispersion_r, update_regression, update_sigma2, DispersionTable};
pub use samples::{IntervalSummary, PosteriorSamples, SamplerConfig};
