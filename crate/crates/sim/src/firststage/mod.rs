//! First-stage exposure model: a log-scale Gaussian downscaler with
//! spatially and temporally varying coefficients, posterior predictive
//! composition sampling, and daily-max aggregation into an ensemble.

mod downscaler;
mod spline;

pub use downscaler::{
    aggregate_daily_max, fit_downscaler, predict_composition, simulate_first_stage,
    DownscalerDesign, DownscalerFit, FirstStageTruth, Observation, SyntheticFirstStage,
    SyntheticSpec, LOG_OFFSET,
};
pub use spline::{build_spline_basis, SplineBasis, SplineKind};
