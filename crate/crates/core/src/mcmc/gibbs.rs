use nalgebra::DVector;
use rayon::prelude::*;

use super::regression::{update_regression, update_sigma2, DispersionTable};
use super::samples::{PosteriorSamples, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::{
    augmentation_quantities, whitened_residual_target, ChainState, ExposureEnsemble, Family,
    HealthDataset, MethodSpec, PriorSpec,
};
use crate::rng::RandomSource;
use crate::updaters::{OpCounts, UpdaterWorkspace};

/// MCMC for one propagation method. Each chain runs on its own stream split
/// from `rng`; chains run in parallel and are stored in chain order.
///
/// Every sweep: MIA column assignment, then `ω`/`Ỹ`, the exposure update,
/// `(β, θ)`, and finally `σ²` or `r`.
pub fn run_gibbs(
    data: &HealthDataset,
    ensemble: &ExposureEnsemble,
    method: &MethodSpec,
    prior: &PriorSpec,
    config: &SamplerConfig,
    rng: &RandomSource,
) -> Result<PosteriorSamples> {
    check_inputs(data, prior, config)?;
    if ensemble.n() != data.n() {
        return Err(Error::Dimension(format!(
            "ensemble has {} rows, data has {} observations",
            ensemble.n(),
            data.n()
        )));
    }
    let z0 = ensemble.zhat(method.summary);
    run_chains(data, prior, config, rng, method_tag(method), |c| {
        let ws = UpdaterWorkspace::prepare(method, ensemble).map_err(|e| chain_error(c, 0, e))?;
        Ok((ws, z0.clone()))
    })
}

/// MCMC with the exposure held at `z` throughout.
pub fn run_gibbs_fixed(
    data: &HealthDataset,
    z: &DVector<f64>,
    prior: &PriorSpec,
    config: &SamplerConfig,
    rng: &RandomSource,
) -> Result<PosteriorSamples> {
    check_inputs(data, prior, config)?;
    if z.len() != data.n() {
        return Err(Error::Dimension(
            "fixed exposure length differs from the data".into(),
        ));
    }
    run_chains(data, prior, config, rng, "fixed".into(), |_| {
        Ok((UpdaterWorkspace::Fixed, z.clone()))
    })
}

fn method_tag(spec: &MethodSpec) -> String {
    serde_json::to_value(spec.method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn check_inputs(data: &HealthDataset, prior: &PriorSpec, config: &SamplerConfig) -> Result<()> {
    config.validate()?;
    prior.validate(data.family())
}

fn chain_error(chain: usize, sweep: usize, e: Error) -> Error {
    Error::Chain {
        chain,
        sweep,
        source: Box::new(e),
    }
}

fn run_chains<'a, F>(
    data: &HealthDataset,
    prior: &PriorSpec,
    config: &SamplerConfig,
    rng: &RandomSource,
    tag: String,
    setup: F,
) -> Result<PosteriorSamples>
where
    F: Fn(usize) -> Result<(UpdaterWorkspace<'a>, DVector<f64>)> + Sync,
{
    let names = PosteriorSamples::parameter_names(data);
    let table =
        (data.family() == Family::NegBin).then(|| DispersionTable::new(data.y(), prior.r_max));
    let chains: Vec<Result<PosteriorSamples>> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let (mut ws, z0) = setup(c)?;
            let mut chain_rng = rng.split(&[c as u64]);
            let mut out = PosteriorSamples::new(
                names.clone(),
                "chain",
                tag.clone(),
                rng.seed(),
                rng.stream_id(),
            );
            run_chain(
                data,
                prior,
                config,
                table.as_ref(),
                &mut ws,
                z0,
                &mut chain_rng,
                c,
                &mut out,
            )?;
            Ok(out)
        })
        .collect();
    let mut all = PosteriorSamples::new(names, "chain", tag, rng.seed(), rng.stream_id());
    for chain in chains {
        all.extend(&chain?)?;
    }
    Ok(all)
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    data: &HealthDataset,
    prior: &PriorSpec,
    config: &SamplerConfig,
    table: Option<&DispersionTable>,
    ws: &mut UpdaterWorkspace<'_>,
    z0: DVector<f64>,
    rng: &mut RandomSource,
    chain: usize,
    out: &mut PosteriorSamples,
) -> Result<()> {
    let mut state = ChainState::initial(data, z0);
    let mut counts = OpCounts::default();
    let mut row = Vec::with_capacity(out.names().len());
    for sweep in 0..config.iterations_total {
        sweep_once(data, prior, table, ws, &mut state, &mut counts, rng)
            .map_err(|e| chain_error(chain, sweep, e))?;
        if config.keeps(sweep) {
            row.clear();
            row.extend(state.beta.iter());
            row.push(state.theta);
            if let Some(s2) = state.sigma2_eps {
                row.push(s2);
            }
            if let Some(r) = state.r {
                row.push(f64::from(r));
            }
            out.push(chain as u32, &row);
        }
    }
    Ok(())
}

fn sweep_once(
    data: &HealthDataset,
    prior: &PriorSpec,
    table: Option<&DispersionTable>,
    ws: &mut UpdaterWorkspace<'_>,
    state: &mut ChainState,
    counts: &mut OpCounts,
    rng: &mut RandomSource,
) -> Result<()> {
    ws.begin_sweep(&mut state.z, rng);
    let aug = augmentation_quantities(state, data, rng)?;
    state.omega = aug.omega;
    if ws.is_latent() {
        let target = whitened_residual_target(state, data, &aug.ytilde);
        let mut z = std::mem::replace(&mut state.z, DVector::zeros(0));
        let res = ws.update(state.theta, &state.omega, &target, &mut z, counts, rng);
        state.z = z;
        res?;
    }
    let (beta, theta) = update_regression(state, data, &state.omega, &aug.ytilde, prior, rng)?;
    state.beta = beta;
    state.theta = theta;
    match data.family() {
        Family::Gaussian => state.sigma2_eps = Some(update_sigma2(state, data, prior, rng)?),
        Family::NegBin => {
            let table = table.expect("negative-binomial table is built up front");
            state.r = Some(table.draw(state, data, rng)?);
        }
        Family::Bernoulli => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Method;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn simulated(n: usize, theta: f64, seed: u64) -> (HealthDataset, DVector<f64>) {
        let mut rng = RandomSource::new(seed, 99);
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            theta * z[i] + e
        });
        (
            HealthDataset::intercept_only(y, None, Family::Gaussian).unwrap(),
            z,
        )
    }

    fn short() -> SamplerConfig {
        SamplerConfig {
            iterations_total: 1_200,
            burn_in: 200,
            thin: 2,
            chains: 2,
        }
    }

    #[test]
    fn plugin_recovers_theta() {
        let (data, z) = simulated(200, 1.0, 1);
        let ens = ExposureEnsemble::new(DMatrix::from_column_slice(200, 1, z.as_slice())).unwrap();
        let s = run_gibbs(
            &data,
            &ens,
            &MethodSpec::new(Method::PlugIn),
            &PriorSpec::default(),
            &short(),
            &RandomSource::new(2, 0),
        )
        .unwrap();
        assert_eq!(s.len(), 1_000);
        let t = s.theta_summary();
        assert!((t.mean - 1.0).abs() < 3.0 * t.sd, "{t:?}");
    }

    #[test]
    fn deterministic_given_seed() {
        let (data, z) = simulated(30, 0.5, 3);
        let ens = ExposureEnsemble::new(DMatrix::from_fn(30, 12, |i, j| {
            z[i] + 0.1 * (j * j % 7) as f64
        }))
        .unwrap();
        for method in [Method::Ukde, Method::Du, Method::Mia] {
            let run = || {
                run_gibbs(
                    &data,
                    &ens,
                    &MethodSpec::new(method),
                    &PriorSpec::default(),
                    &short(),
                    &RandomSource::new(4, 1),
                )
                .unwrap()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let (data, z) = simulated(10, 0.5, 5);
        let mut cfg = short();
        cfg.thin = 7;
        assert!(run_gibbs_fixed(
            &data,
            &z,
            &PriorSpec::default(),
            &cfg,
            &RandomSource::new(1, 0)
        )
        .is_err());
        let flat_bernoulli =
            HealthDataset::intercept_only(DVector::from_element(3, 1.0), None, Family::Bernoulli)
                .unwrap();
        assert!(run_gibbs_fixed(
            &flat_bernoulli,
            &DVector::zeros(3),
            &PriorSpec::flat(),
            &short(),
            &RandomSource::new(1, 0)
        )
        .is_err());
    }
}
