use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use expoprop_core::io::{read_table, write_matrix};
use expoprop_core::model::{standardize_ensemble, AffineTransform};
use expoprop_core::{stats, RandomSource};
use expoprop_sim::firststage::{
    aggregate_daily_max, fit_downscaler, predict_composition, simulate_first_stage,
    DownscalerDesign, Observation, LOG_OFFSET,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::DownscaleConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_atomic, write_json};

fn read_observations(path: &Path, with_value: bool) -> CliResult<Vec<Observation>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let table = read_table(BufReader::new(file))?;
    let column = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| CliError::config(format!("{}: no column `{name}`", path.display())))
    };
    let (loc, lat, lon, day, pred) = (
        column("location")?,
        column("lat")?,
        column("lon")?,
        column("day")?,
        column("predictor")?,
    );
    let value = if with_value {
        Some(column("value")?)
    } else {
        None
    };
    (0..table.nrows())
        .map(|i| {
            if !(loc[i] >= 0.0 && loc[i].fract() == 0.0) {
                return Err(CliError::config(format!(
                    "{}: location id {} on data row {} is not a nonnegative integer",
                    path.display(),
                    loc[i],
                    i + 1
                )));
            }
            Ok(Observation {
                location: loc[i] as usize,
                lat: lat[i],
                lon: lon[i],
                day: day[i],
                value: value.map_or(0.0, |v| v[i]),
                predictor: pred[i],
            })
        })
        .collect()
}

fn observation_csv(rows: &[Observation]) -> String {
    let mut out = String::from("location,lat,lon,day,value,predictor\n");
    for o in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            o.location, o.lat, o.lon, o.day, o.value, o.predictor
        );
    }
    out
}

#[derive(Serialize)]
struct EnsembleSummary {
    days: usize,
    draws: usize,
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
    median_of_row_medians: f64,
    sigma2_posterior_mean: f64,
    coefficients: Vec<(String, f64)>,
    standardization: Option<AffineTransform>,
}

pub fn run(cfg: &DownscaleConfig, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let rng = RandomSource::new(cfg.seed, 0);
    let mut outputs = Vec::new();
    let (observations, grid) = match &cfg.synthetic {
        Some(spec) => {
            let world = simulate_first_stage(spec, &mut rng.split(&[0]))?;
            for (name, rows) in [
                ("observations.csv", &world.observations),
                ("grid.csv", &world.grid),
            ] {
                let path = out_dir.join(name);
                write_atomic(&path, observation_csv(rows).as_bytes())?;
                outputs.push(path);
            }
            let truth_path = out_dir.join("truth.csv");
            let mut buf = Vec::new();
            let truth = world.true_daily_max();
            write_matrix(
                &mut buf,
                &nalgebra::DMatrix::from_column_slice(truth.len(), 1, truth.as_slice()),
                None,
            )?;
            write_atomic(&truth_path, &buf)?;
            outputs.push(truth_path);
            (world.observations, world.grid)
        }
        None => {
            let obs = cfg.observations.as_deref().expect("validated");
            let grid = cfg.grid.as_deref().expect("validated");
            (
                read_observations(obs, true)?,
                read_observations(grid, false)?,
            )
        }
    };
    if let Some((i, o)) = observations
        .iter()
        .enumerate()
        .find(|(_, o)| !(o.value > -LOG_OFFSET))
    {
        return Err(CliError::config(format!(
            "observation {} has value {} at or below -{LOG_OFFSET}",
            i + 1,
            o.value
        )));
    }

    let days: Vec<f64> = observations.iter().chain(&grid).map(|o| o.day).collect();
    let design = DownscalerDesign::new(&days)?;
    let d_obs = design.matrix(&observations)?;
    let log_obs = DVector::from_iterator(
        observations.len(),
        observations.iter().map(|o| (o.value + LOG_OFFSET).ln()),
    );
    let fit = fit_downscaler(&log_obs, &d_obs, cfg.draws, &mut rng.split(&[1]))?;
    let pred = predict_composition(&fit, &design.matrix(&grid)?, &rng.split(&[2]))?;

    let mut unique: Vec<f64> = grid.iter().map(|o| o.day).collect();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let day_index: Vec<usize> = grid
        .iter()
        .map(|o| unique.partition_point(|&d| d < o.day))
        .collect();
    let ensemble = aggregate_daily_max(&pred, &day_index)?;
    let (ensemble, transform) = match cfg.standardize {
        Some(mode) => {
            let (e, t) = standardize_ensemble(&ensemble, mode)?;
            (e, Some(t))
        }
        None => (ensemble, None),
    };

    let ensemble_path = out_dir.join("ensemble.csv");
    let mut buf = Vec::new();
    write_matrix(&mut buf, ensemble.draws(), None)?;
    write_atomic(&ensemble_path, &buf)?;
    let days_path = out_dir.join("days.csv");
    let mut text = String::from("row,day\n");
    for (k, d) in unique.iter().enumerate() {
        let _ = writeln!(text, "{k},{d}");
    }
    write_atomic(&days_path, text.as_bytes())?;

    let all = ensemble.draws().as_slice();
    let medians: Vec<f64> = (0..ensemble.n())
        .map(|i| stats::median(ensemble.row(i)))
        .collect();
    let summary_path = out_dir.join("ensemble.summary.json");
    write_json(
        &summary_path,
        &EnsembleSummary {
            days: ensemble.n(),
            draws: ensemble.m(),
            mean: stats::mean(all),
            sd: stats::sd(all),
            min: ensemble.draws().min(),
            max: ensemble.draws().max(),
            median_of_row_medians: stats::median(&medians),
            sigma2_posterior_mean: stats::mean(&fit.sigma2),
            coefficients: DownscalerDesign::column_names()
                .into_iter()
                .zip(fit.coef_mean().iter().copied())
                .collect(),
            standardization: transform,
        },
    )?;
    outputs.extend([ensemble_path, days_path, summary_path]);
    Ok(outputs)
}
