use serde::Serialize;

use super::samples::PosteriorSamples;
use crate::error::{Error, Result};
use crate::stats;

/// Geweke z-scores per parameter; `None` marks a diagnostic that is
/// undefined because a window has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GewekeReport {
    pub names: Vec<String>,
    pub z_scores: Vec<Option<f64>>,
    pub frac_first: f64,
    pub frac_last: f64,
}

impl GewekeReport {
    pub fn z(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        self.z_scores[k]
    }
}

// Variance of a window mean from the spectral density at zero of an AR(p)
// fit, with p chosen by AIC over Yule-Walker (Levinson-Durbin) fits.
fn spectral_se2(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mean = stats::mean(xs);
    let max_order = ((10.0 * (n as f64).log10()).floor() as usize).min(n - 1);
    let acov: Vec<f64> = (0..=max_order)
        .map(|k| {
            (k..n)
                .map(|t| (xs[t] - mean) * (xs[t - k] - mean))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    if !(acov[0] > 0.0) {
        return 0.0;
    }
    let mut phi: Vec<f64> = Vec::new();
    let mut v = acov[0];
    let mut best = (n as f64 * v.ln(), 0usize, 0.0, v);
    for k in 1..=max_order {
        let num = acov[k]
            - phi
                .iter()
                .enumerate()
                .map(|(j, p)| p * acov[k - 1 - j])
                .sum::<f64>();
        let refl = num / v;
        let prev = phi.clone();
        phi.push(refl);
        for j in 0..k - 1 {
            phi[j] = prev[j] - refl * prev[k - 2 - j];
        }
        v *= 1.0 - refl * refl;
        if !(v > 0.0) {
            break;
        }
        let aic = n as f64 * v.ln() + 2.0 * k as f64;
        if aic < best.0 {
            best = (aic, k, phi.iter().sum(), v);
        }
    }
    let (_, order, phi_sum, v) = best;
    let innovation = v * n as f64 / (n - order - 1) as f64;
    innovation / (1.0 - phi_sum).powi(2) / n as f64
}

/// Compare the mean of the first `frac_first` of a chain to the mean of its
/// last `frac_last`.
pub fn geweke_z(chain: &[f64], frac_first: f64, frac_last: f64) -> Option<f64> {
    let n = chain.len();
    let n1 = (frac_first * n as f64).floor() as usize;
    let n2 = (frac_last * n as f64).floor() as usize;
    if n1 < 4 || n2 < 4 || n1 + n2 > n {
        return None;
    }
    let first = &chain[..n1];
    let last = &chain[n - n2..];
    let se2 = spectral_se2(first) + spectral_se2(last);
    if !(se2 > 0.0) || !se2.is_finite() {
        return None;
    }
    Some((stats::mean(first) - stats::mean(last)) / se2.sqrt())
}

/// Geweke diagnostic for every parameter of the first chain (or pooled
/// group 0) of `samples`.
pub fn geweke_diagnostic(
    samples: &PosteriorSamples,
    frac_first: f64,
    frac_last: f64,
) -> Result<GewekeReport> {
    if !(frac_first > 0.0 && frac_last > 0.0 && frac_first + frac_last < 1.0 + 1e-12) {
        return Err(Error::invalid(
            "geweke windows",
            format!("({frac_first}, {frac_last})"),
        ));
    }
    let len = samples.groups().iter().filter(|&&g| g == 0).count();
    if len < 100 {
        return Err(Error::invalid(
            "geweke",
            format!("needs at least 100 draws, got {len}"),
        ));
    }
    let z_scores = (0..samples.names().len())
        .map(|k| geweke_z(&samples.group_column(k, 0), frac_first, frac_last))
        .collect();
    Ok(GewekeReport {
        names: samples.names().to_vec(),
        z_scores,
        frac_first,
        frac_last,
    })
}
