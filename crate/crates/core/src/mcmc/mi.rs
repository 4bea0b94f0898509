use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gibbs::run_gibbs_fixed;
use super::monte_carlo::run_monte_carlo_gaussian;
use super::samples::{PosteriorSamples, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{CoefPrior, ExposureEnsemble, Family, HealthDataset, PriorSpec};
use crate::rng::RandomSource;
use crate::updaters::mi_schedule;

/// Per-fit budget of multiple imputation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiConfig {
    /// Monte Carlo draws per column (gaussian outcomes, flat prior).
    pub per_fit_draws: usize,
    /// MCMC budget per column for every other case.
    pub per_fit_mcmc: SamplerConfig,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            per_fit_draws: 1_000,
            per_fit_mcmc: SamplerConfig {
                iterations_total: 2_200,
                burn_in: 200,
                thin: 2,
                chains: 1,
            },
        }
    }
}

/// One fit per ensemble column, pooled. Rows are tagged with their source
/// column. Aborts when more than 1% of the fits fail.
pub fn run_mi(
    data: &HealthDataset,
    ensemble: &ExposureEnsemble,
    prior: &PriorSpec,
    config: &MiConfig,
    rng: &RandomSource,
) -> Result<PosteriorSamples> {
    if ensemble.n() != data.n() {
        return Err(Error::Dimension(
            "ensemble rows differ from the data".into(),
        ));
    }
    let monte_carlo = data.family() == Family::Gaussian && prior.coef == CoefPrior::Flat;
    let columns: Vec<_> = mi_schedule(ensemble).collect();
    let fits: Vec<Result<PosteriorSamples>> = columns
        .par_iter()
        .enumerate()
        .map(|(j, z)| {
            let mut fit_rng = rng.split(&[j as u64]);
            let mut fit = if monte_carlo {
                run_monte_carlo_gaussian(data, z, prior, config.per_fit_draws, &mut fit_rng)?
            } else {
                run_gibbs_fixed(data, z, prior, &config.per_fit_mcmc, &fit_rng)?
            };
            fit.relabel_groups(j as u32);
            Ok(fit)
        })
        .collect();
    let total = fits.len();
    let failed = fits.iter().filter(|f| f.is_err()).count();
    if failed * 100 > total {
        return Err(Error::TooManyFailures { failed, total });
    }
    let mut pooled = PosteriorSamples::new(
        PosteriorSamples::parameter_names(data),
        "source_column",
        "mi",
        rng.seed(),
        rng.stream_id(),
    );
    for fit in fits.into_iter().flatten() {
        pooled.extend(&fit)?;
    }
    Ok(pooled)
}
