use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use expoprop_core::io::{read_matrix, read_table};
use expoprop_core::mcmc::{
    geweke_diagnostic, run_gibbs, run_mi, run_monte_carlo_gaussian, IntervalSummary,
    PosteriorSamples,
};
use expoprop_core::model::{
    standardize_ensemble, CoefPrior, ExposureEnsemble, Family, HealthDataset, Method,
};
use expoprop_core::updaters::plugin_exposure;
use expoprop_core::RandomSource;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::FitConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_atomic, write_json};

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn load_data(cfg: &FitConfig) -> CliResult<HealthDataset> {
    let d = &cfg.data;
    let table = read_table(open(&d.table)?)?;
    let column = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| CliError::config(format!("{}: no column `{name}`", d.table.display())))
    };
    let y = DVector::from_column_slice(column(&d.outcome)?);
    let n = y.len();
    let mut x = DMatrix::from_element(n, 1 + d.covariates.len(), 1.0);
    for (k, name) in d.covariates.iter().enumerate() {
        x.set_column(k + 1, &DVector::from_column_slice(column(name)?));
    }
    let offset = d
        .offset
        .as_deref()
        .map(|name| column(name).map(DVector::from_column_slice))
        .transpose()?;
    Ok(HealthDataset::new(y, x, offset, d.family)?)
}

#[derive(Serialize)]
struct SampleMetadata<'a> {
    method: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a FitConfig,
    draws: usize,
    parameters: &'a [String],
    group_label: &'a str,
    runtime_seconds: f64,
    summaries: Vec<(String, IntervalSummary)>,
}

/// Fit the configured method and write samples, their metadata, and the
/// Geweke report into `out_dir`.
pub fn run(cfg: &FitConfig, config_hash: &str, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let sampler = cfg.sampler.resolve()?;
    let prior = cfg.prior.resolve();
    let data = load_data(cfg)?;
    prior.validate(data.family())?;
    let ensemble = ExposureEnsemble::new(read_matrix(open(&cfg.data.ensemble)?)?)?;
    let ensemble = match cfg.data.standardize {
        Some(mode) => standardize_ensemble(&ensemble, mode)?.0,
        None => ensemble,
    };
    if ensemble.n() != data.n() {
        return Err(CliError::config(format!(
            "ensemble has {} rows but the data table has {}",
            ensemble.n(),
            data.n()
        )));
    }

    let rng = RandomSource::new(cfg.seed, 0);
    let start = Instant::now();
    let flat_gaussian = data.family() == Family::Gaussian && prior.coef == CoefPrior::Flat;
    let draws = sampler.retained_per_chain() * sampler.chains;
    let samples: PosteriorSamples = match cfg.method.method {
        Method::PlugIn if flat_gaussian => {
            let zhat = plugin_exposure(&ensemble, cfg.method.summary);
            run_monte_carlo_gaussian(&data, &zhat, &prior, draws, &mut rng.split(&[0]))?
        }
        Method::Mi => run_mi(&data, &ensemble, &prior, &cfg.mi.unwrap_or_default(), &rng)?,
        _ => run_gibbs(&data, &ensemble, &cfg.method, &prior, &sampler, &rng)?,
    };
    let runtime = start.elapsed().as_secs_f64();

    let samples_path = out_dir.join("samples.csv");
    let mut buf = Vec::new();
    samples
        .write_delimited(&mut buf)
        .map_err(|e| CliError::io(&samples_path, e))?;
    write_atomic(&samples_path, &buf)?;

    let geweke_path = out_dir.join("geweke.json");
    let report = geweke_diagnostic(&samples, cfg.geweke.first, cfg.geweke.last)?;
    write_json(&geweke_path, &report)?;

    let meta_path = out_dir.join("samples.meta.json");
    let summaries = samples
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| {
            (
                name.clone(),
                IntervalSummary::from_draws(&samples.column(k)),
            )
        })
        .collect();
    write_json(
        &meta_path,
        &SampleMetadata {
            method: &samples.method,
            seed: cfg.seed,
            config_hash,
            config: cfg,
            draws: samples.len(),
            parameters: samples.names(),
            group_label: samples.group_label(),
            runtime_seconds: runtime,
            summaries,
        },
    )?;
    log::info!(
        "{} draws of {} parameters in {runtime:.2} s",
        samples.len(),
        samples.names().len()
    );
    Ok(vec![samples_path, meta_path, geweke_path])
}
