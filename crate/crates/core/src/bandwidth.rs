//! Bandwidths for the Gaussian-kernel exposure priors.
//!
//! Bandwidths are estimated once from the ensemble and held fixed during
//! sampling.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ExposureEnsemble;
use crate::stats;

/// Relative jitter added to the diagonal of the ensemble covariance before
/// it is factored.
pub const COVARIANCE_JITTER: f64 = 1e-8;

/// Grid size for the binned pairwise-difference functionals.
const SJ_BINS: usize = 1000;
const SJ_BISECTION_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthSelector {
    #[default]
    SheatherJones,
    Silverman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthOrigin {
    Silverman,
    SheatherJones,
    /// Sheather–Jones had no bracketed root; the rule of thumb was used.
    SilvermanFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateBandwidth {
    h: f64,
    origin: BandwidthOrigin,
}

impl UnivariateBandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("bandwidth", h));
        }
        Ok(Self {
            h,
            origin: BandwidthOrigin::Silverman,
        })
    }

    pub fn value(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> BandwidthOrigin {
        self.origin
    }

    pub fn fell_back(&self) -> bool {
        self.origin == BandwidthOrigin::SilvermanFallback
    }
}

pub fn select(samples: &[f64], selector: BandwidthSelector) -> Result<UnivariateBandwidth> {
    match selector {
        BandwidthSelector::SheatherJones => bandwidth_sheather_jones(samples),
        BandwidthSelector::Silverman => bandwidth_silverman(samples),
    }
}

// min(sd, IQR / iqr_divisor), falling back to sd when the IQR collapses
fn robust_scale(samples: &[f64], iqr_divisor: f64) -> Result<f64> {
    let sd = stats::sd(samples);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateSample(format!(
            "{} samples with standard deviation {sd}",
            samples.len()
        )));
    }
    let iqr = stats::iqr(samples) / iqr_divisor;
    Ok(if iqr > 0.0 { sd.min(iqr) } else { sd })
}

/// Rule of thumb `0.9 · min(sd, IQR/1.34) · m^(-1/5)`.
pub fn bandwidth_silverman(samples: &[f64]) -> Result<UnivariateBandwidth> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "{} samples",
            samples.len()
        )));
    }
    let scale = robust_scale(samples, 1.34)?;
    Ok(UnivariateBandwidth {
        h: 0.9 * scale * (samples.len() as f64).powf(-0.2),
        origin: BandwidthOrigin::Silverman,
    })
}

/// Pairwise absolute differences, linearly binned onto an equispaced grid
/// starting at zero.
struct BinnedDifferences {
    m: usize,
    delta: f64,
    counts: Vec<f64>,
}

impl BinnedDifferences {
    fn new(samples: &[f64]) -> Self {
        let m = samples.len();
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let delta = (hi - lo) / (SJ_BINS - 1) as f64;
        let mut counts = vec![0.0; SJ_BINS];
        for i in 1..m {
            let xi = samples[i];
            for &xj in &samples[..i] {
                let pos = (xi - xj).abs() / delta;
                let k = (pos as usize).min(SJ_BINS - 2);
                let frac = (pos - k as f64).min(1.0);
                counts[k] += 1.0 - frac;
                counts[k + 1] += frac;
            }
        }
        Self { m, delta, counts }
    }

    // sum over pairs plus diagonal of the r-th Gaussian derivative at d/g
    fn functional(&self, g: f64, deriv: impl Fn(f64) -> f64) -> f64 {
        let mut sum = 0.0;
        for (k, &c) in self.counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let u = k as f64 * self.delta / g;
            let u2 = u * u;
            if u2 > 1000.0 {
                break;
            }
            sum += c * deriv(u2) * (-0.5 * u2).exp();
        }
        2.0 * sum + self.m as f64 * deriv(0.0)
    }

    /// Estimate of `∫ f''(x)^2 dx` with pilot bandwidth `g`.
    fn phi4(&self, g: f64) -> f64 {
        let m = self.m as f64;
        let s = self.functional(g, |u2| u2 * u2 - 6.0 * u2 + 3.0);
        s / (m * (m - 1.0) * g.powi(5) * (2.0 * PI).sqrt())
    }

    /// Estimate of `-∫ f'''(x)^2 dx` with pilot bandwidth `g`.
    fn phi6(&self, g: f64) -> f64 {
        let m = self.m as f64;
        let s = self.functional(g, |u2| u2 * u2 * u2 - 15.0 * u2 * u2 + 45.0 * u2 - 15.0);
        s / (m * (m - 1.0) * g.powi(7) * (2.0 * PI).sqrt())
    }
}

/// Sheather–Jones solve-the-equation plug-in bandwidth.
///
/// Falls back to [`bandwidth_silverman`] (flagged in the result) when the
/// kernel functionals are not positive or the equation has no root in
/// `[h_s / 100, 100 h_s]`.
pub fn bandwidth_sheather_jones(samples: &[f64]) -> Result<UnivariateBandwidth> {
    let m = samples.len();
    if m < 10 {
        return Err(Error::DegenerateSample(format!(
            "Sheather-Jones needs at least 10 samples, got {m}"
        )));
    }
    let silverman = bandwidth_silverman(samples)?;
    let fallback = UnivariateBandwidth {
        h: silverman.h,
        origin: BandwidthOrigin::SilvermanFallback,
    };
    let mf = m as f64;
    let scale = robust_scale(samples, 1.349)?;
    let bins = BinnedDifferences::new(samples);

    let a = 1.24 * scale * mf.powf(-1.0 / 7.0);
    let b = 1.23 * scale * mf.powf(-1.0 / 9.0);
    let c1 = 1.0 / (2.0 * PI.sqrt() * mf);
    let td = -bins.phi6(b);
    let sd_a = bins.phi4(a);
    if !(td > 0.0) || !(sd_a > 0.0) || !td.is_finite() {
        return Ok(fallback);
    }
    let alpha2 = 1.357 * (sd_a / td).powf(1.0 / 7.0);
    let equation = |h: f64| {
        let s = bins.phi4(alpha2 * h.powf(5.0 / 7.0));
        if s > 0.0 {
            (c1 / s).powf(0.2) - h
        } else {
            f64::NAN
        }
    };

    let (mut lo, mut hi) = (silverman.h / 100.0, silverman.h * 100.0);
    let (mut f_lo, f_hi) = (equation(lo), equation(hi));
    if !f_lo.is_finite() || !f_hi.is_finite() || f_lo * f_hi > 0.0 {
        return Ok(fallback);
    }
    for _ in 0..SJ_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let f_mid = equation(mid);
        if !f_mid.is_finite() {
            return Ok(fallback);
        }
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(UnivariateBandwidth {
        h: 0.5 * (lo + hi),
        origin: BandwidthOrigin::SheatherJones,
    })
}

/// `a + COVARIANCE_JITTER · mean(diag(a)) · I`.
pub fn with_jitter(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mean_diag = a.diagonal().mean();
    if !(mean_diag > 0.0) || !mean_diag.is_finite() {
        return Err(Error::DegenerateEnsemble(format!(
            "mean diagonal is {mean_diag}"
        )));
    }
    let mut out = a.clone();
    for i in 0..a.nrows() {
        out[(i, i)] += COVARIANCE_JITTER * mean_diag;
    }
    Ok(out)
}

/// Full bandwidth matrix with its Cholesky factor and inverse.
#[derive(Debug, Clone)]
pub struct BandwidthMatrix {
    h: DMatrix<f64>,
    regularized: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl BandwidthMatrix {
    /// Factor a symmetric positive definite matrix, after adding
    /// `COVARIANCE_JITTER · mean(diag)` to the diagonal.
    pub fn from_matrix(h: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 || h.ncols() != n {
            return Err(Error::Dimension(format!(
                "bandwidth matrix is {}x{}",
                n,
                h.ncols()
            )));
        }
        let jittered = with_jitter(&h).map_err(|e| match e {
            Error::DegenerateEnsemble(msg) => Error::SingularBandwidth(msg),
            other => other,
        })?;
        let chol = jittered.clone().cholesky().ok_or_else(|| {
            Error::SingularBandwidth("Cholesky factorization failed after jitter".into())
        })?;
        let inverse = chol.inverse();
        Ok(Self {
            h,
            regularized: jittered,
            chol_lower: chol.l(),
            inverse,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// The jittered matrix that was actually factored.
    pub fn regularized(&self) -> &DMatrix<f64> {
        &self.regularized
    }

    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol_lower
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Scott's rule `H = m^(-2/(n+4)) · Σ̂` from the ensemble covariance.
pub fn bandwidth_scott_matrix(ensemble: &ExposureEnsemble) -> Result<BandwidthMatrix> {
    let (n, m) = (ensemble.n(), ensemble.m());
    if m < 2 {
        return Err(Error::SingularBandwidth(format!(
            "covariance needs at least 2 draws, got {m}"
        )));
    }
    let factor = (m as f64).powf(-2.0 / (n as f64 + 4.0));
    BandwidthMatrix::from_matrix(ensemble.covariance() * factor)
}
