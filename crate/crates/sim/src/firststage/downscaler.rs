use expoprop_core::mcmc::conjugate_flat_draws;
use expoprop_core::model::ExposureEnsemble;
use expoprop_core::{Error, RandomSource, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spline::{build_spline_basis, SplineBasis, SplineKind};

/// Added before taking logs of concentrations and removed after.
pub const LOG_OFFSET: f64 = 0.01;

const TIME_DF: usize = 4;
const PRIOR_SHAPE: f64 = 0.01;
const PRIOR_RATE: f64 = 0.01;

/// One monitor-day (or prediction cell-day) record. `value` is unused for
/// prediction rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub location: usize,
    pub lat: f64,
    pub lon: f64,
    pub day: f64,
    pub value: f64,
    pub predictor: f64,
}

/// Intercept and slope on the log predictor, each linear in latitude,
/// longitude and their product plus a cubic B-spline in time: 16 columns.
#[derive(Debug, Clone)]
pub struct DownscalerDesign {
    time_basis: SplineBasis,
}

impl DownscalerDesign {
    pub fn new(days: &[f64]) -> Result<Self> {
        Ok(Self {
            time_basis: build_spline_basis(days, TIME_DF, SplineKind::BsplinePolynomial)?,
        })
    }

    pub fn ncols(&self) -> usize {
        2 * (4 + TIME_DF)
    }

    pub fn column_names() -> Vec<String> {
        let base: Vec<String> = ["mu", "lat", "lon", "lat_lon"]
            .iter()
            .map(|s| s.to_string())
            .chain((1..=TIME_DF).map(|k| format!("time_{k}")))
            .collect();
        base.iter()
            .map(|b| format!("{b}_0"))
            .chain(base.iter().map(|b| format!("{b}_1")))
            .collect()
    }

    pub fn matrix(&self, rows: &[Observation]) -> Result<DMatrix<f64>> {
        let days: Vec<f64> = rows.iter().map(|r| r.day).collect();
        let time = self.time_basis.evaluate(&days)?;
        let q = self.ncols();
        let half = q / 2;
        let mut d = DMatrix::zeros(rows.len(), q);
        for (i, r) in rows.iter().enumerate() {
            if !(r.predictor > -LOG_OFFSET) {
                return Err(Error::InvalidData(format!(
                    "predictor {} at row {i} is below the log offset",
                    r.predictor
                )));
            }
            let log_c = (r.predictor + LOG_OFFSET).ln();
            let mut base = [0.0; 4 + TIME_DF];
            base[..4].copy_from_slice(&[1.0, r.lat, r.lon, r.lat * r.lon]);
            for k in 0..TIME_DF {
                base[4 + k] = time[(i, k)];
            }
            for k in 0..half {
                d[(i, k)] = base[k];
                d[(i, half + k)] = base[k] * log_c;
            }
        }
        Ok(d)
    }
}

/// Independent posterior draws of the downscaler (rows of `coef`).
#[derive(Debug, Clone, PartialEq)]
pub struct DownscalerFit {
    pub coef: DMatrix<f64>,
    pub sigma2: Vec<f64>,
}

impl DownscalerFit {
    pub fn draws(&self) -> usize {
        self.sigma2.len()
    }

    pub fn coef_mean(&self) -> DVector<f64> {
        self.coef.row_mean().transpose()
    }
}

/// Flat-prior conjugate Monte Carlo fit of `ln(Z + 0.01) = Dγ + ε` with
/// `σ² ~ IG(0.01, 0.01)`.
pub fn fit_downscaler(
    log_obs: &DVector<f64>,
    design: &DMatrix<f64>,
    draws: usize,
    rng: &mut RandomSource,
) -> Result<DownscalerFit> {
    if draws == 0 {
        return Err(Error::InvalidParameter {
            name: "draws",
            value: "0".into(),
        });
    }
    let out = conjugate_flat_draws(design, log_obs, PRIOR_SHAPE, PRIOR_RATE, draws, rng)?;
    let q = design.ncols();
    let mut coef = DMatrix::zeros(draws, q);
    for (k, d) in out.iter().enumerate() {
        coef.set_row(k, &d.coef.transpose());
    }
    Ok(DownscalerFit {
        coef,
        sigma2: out.iter().map(|d| d.sigma2).collect(),
    })
}

/// Composition sampling: column `k` is `exp(Dγ_k + ε) - 0.01` with
/// `ε ~ N(0, σ²_k)`, one joint draw per posterior draw.
pub fn predict_composition(
    fit: &DownscalerFit,
    design: &DMatrix<f64>,
    rng: &RandomSource,
) -> Result<DMatrix<f64>> {
    if fit.draws() == 0 {
        return Err(Error::InvalidData("empty downscaler fit".into()));
    }
    if design.ncols() != fit.coef.ncols() {
        return Err(Error::Dimension(format!(
            "design has {} columns, fit has {}",
            design.ncols(),
            fit.coef.ncols()
        )));
    }
    let columns: Vec<DVector<f64>> = (0..fit.draws())
        .into_par_iter()
        .map(|k| {
            let mut r = rng.split(&[k as u64]);
            let mean = design * fit.coef.row(k).transpose();
            let sd = fit.sigma2[k].sqrt();
            mean.map(|m| {
                let e: f64 = StandardNormal.sample(&mut r);
                (m + sd * e).exp() - LOG_OFFSET
            })
        })
        .collect();
    Ok(DMatrix::from_columns(&columns))
}

/// Per day and per joint draw, the maximum over that day's rows.
pub fn aggregate_daily_max(
    predictions: &DMatrix<f64>,
    day_index: &[usize],
) -> Result<ExposureEnsemble> {
    if day_index.len() != predictions.nrows() {
        return Err(Error::Dimension(format!(
            "{} day labels for {} prediction rows",
            day_index.len(),
            predictions.nrows()
        )));
    }
    let days = day_index.iter().max().map_or(0, |d| d + 1);
    let mut out = DMatrix::from_element(days, predictions.ncols(), f64::NEG_INFINITY);
    let mut seen = vec![false; days];
    for (row, &d) in day_index.iter().enumerate() {
        seen[d] = true;
        for k in 0..predictions.ncols() {
            out[(d, k)] = out[(d, k)].max(predictions[(row, k)]);
        }
    }
    if let Some(d) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidData(format!(
            "day {d} has no prediction rows"
        )));
    }
    ExposureEnsemble::new(out)
}

/// Size and noise level of a synthetic first stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub monitors: usize,
    pub cells: usize,
    pub days: usize,
    pub sigma2: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            monitors: 12,
            cells: 9,
            days: 365,
            sigma2: 0.1,
        }
    }
}

/// Data-generating values of the synthetic downscaler.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageTruth {
    pub coef: DVector<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticFirstStage {
    pub observations: Vec<Observation>,
    /// Prediction cells for every day, with the true concentrations in `value`.
    pub grid: Vec<Observation>,
    pub grid_day_index: Vec<usize>,
    pub design: DownscalerDesign,
    pub truth: FirstStageTruth,
}

impl SyntheticFirstStage {
    pub fn log_observations(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.observations.len(),
            self.observations
                .iter()
                .map(|o| (o.value + LOG_OFFSET).ln()),
        )
    }

    /// True daily maxima over the prediction cells.
    pub fn true_daily_max(&self) -> DVector<f64> {
        let days = self.grid_day_index.iter().max().map_or(0, |d| d + 1);
        let mut out = DVector::from_element(days, f64::NEG_INFINITY);
        for (o, &d) in self.grid.iter().zip(&self.grid_day_index) {
            out[d] = out[d].max(o.value);
        }
        out
    }
}

fn synthetic_coefficients() -> DVector<f64> {
    DVector::from_vec(vec![
        // intercept surface
        0.6, 0.3, -0.2, 0.15, 0.4, -0.3, 0.2, 0.1, //
        // slope surface on the log predictor
        0.7, -0.1, 0.05, 0.1, -0.1, 0.15, -0.05, 0.05,
    ])
}

/// A downscaler world: monitors and prediction cells at coordinates centred
/// on the study region, a log-normal predictor field with a seasonal cycle,
/// and concentrations drawn from the model itself.
pub fn simulate_first_stage(
    spec: &SyntheticSpec,
    rng: &mut RandomSource,
) -> Result<SyntheticFirstStage> {
    if spec.monitors == 0 || spec.cells == 0 || spec.days < 10 || !(spec.sigma2 >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "synthetic first stage",
            value: format!("{spec:?}"),
        });
    }
    let site = |rng: &mut RandomSource| (rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
    let monitors: Vec<(f64, f64)> = (0..spec.monitors).map(|_| site(rng)).collect();
    let cells: Vec<(f64, f64)> = (0..spec.cells).map(|_| site(rng)).collect();
    let season: Vec<f64> = (0..spec.days)
        .map(|t| {
            let u: f64 = StandardNormal.sample(rng);
            2.2 + 0.3 * (2.0 * std::f64::consts::PI * t as f64 / 365.0).sin() + 0.35 * u
        })
        .collect();
    let predictor = |rng: &mut RandomSource, t: usize, lat: f64| {
        let v: f64 = StandardNormal.sample(rng);
        (season[t] + 0.2 * lat + 0.2 * v).exp()
    };
    let mut observations = Vec::with_capacity(spec.monitors * spec.days);
    let mut grid = Vec::with_capacity(spec.cells * spec.days);
    let mut grid_day_index = Vec::with_capacity(spec.cells * spec.days);
    for t in 0..spec.days {
        for (k, &(lat, lon)) in monitors.iter().enumerate() {
            let c = predictor(rng, t, lat);
            observations.push(Observation {
                location: k,
                lat,
                lon,
                day: t as f64,
                value: 0.0,
                predictor: c,
            });
        }
        for (k, &(lat, lon)) in cells.iter().enumerate() {
            let c = predictor(rng, t, lat);
            grid.push(Observation {
                location: k,
                lat,
                lon,
                day: t as f64,
                value: 0.0,
                predictor: c,
            });
            grid_day_index.push(t);
        }
    }
    let days: Vec<f64> = (0..spec.days).map(|t| t as f64).collect();
    let design = DownscalerDesign::new(&days)?;
    let coef = synthetic_coefficients();
    let sd = spec.sigma2.sqrt();
    for rows in [&mut observations, &mut grid] {
        let mean = design.matrix(rows)? * &coef;
        for (o, m) in rows.iter_mut().zip(mean.iter()) {
            let e: f64 = StandardNormal.sample(rng);
            o.value = (m + sd * e).exp() - LOG_OFFSET;
        }
    }
    Ok(SyntheticFirstStage {
        observations,
        grid,
        grid_day_index,
        design,
        truth: FirstStageTruth {
            coef,
            sigma2: spec.sigma2,
        },
    })
}
