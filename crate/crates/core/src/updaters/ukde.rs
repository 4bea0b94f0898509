use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::OpCounts;
use crate::bandwidth::BandwidthSelector;
use crate::distributions::sample_categorical_in_place;
use crate::error::{Error, Result};
use crate::model::ExposureEnsemble;

/// Proposals tried before the rejection sampler falls back to enumeration.
const MAX_REJECTIONS: usize = 64;

/// How the mixture component of each `z_i` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UkdeSampling {
    /// Exact rejection sampling from the component weights: uniform
    /// proposals accepted with probability `c_ij / max_j c_ij`, where the
    /// maximum comes from a binary search of the sorted row. Falls back to
    /// enumeration after a bounded number of rejections.
    #[default]
    Rejection,
    /// Evaluate all `m` weights and draw from the normalized categorical.
    Enumerate,
}

/// Log mixture weights `log c_ij`, up to a constant in `j`, for a single
/// data point with bandwidth `h`, precision `omega` and residual target `r`.
pub fn ukde_component_logweights(row: &[f64], h: f64, theta: f64, omega: f64, r: f64) -> Vec<f64> {
    let a = omega / (1.0 + theta * theta * h * h * omega);
    row.iter()
        .map(|&zs| {
            let d = r - theta * zs;
            -0.5 * a * d * d
        })
        .collect()
}

/// Independent Gaussian-KDE priors `z_i ~ (1/m) Σ_j N(z*_ij, h_i²)`.
#[derive(Debug, Clone)]
pub struct UkdeUpdater {
    n: usize,
    m: usize,
    // each row sorted ascending; component order does not affect the law
    rows: Vec<f64>,
    h2: Vec<f64>,
    buf: Vec<f64>,
    sampling: UkdeSampling,
    components: Vec<usize>,
}

impl UkdeUpdater {
    pub fn new(ensemble: &ExposureEnsemble, selector: BandwidthSelector) -> Result<Self> {
        let h: Vec<f64> = ensemble
            .row_bandwidths(selector)?
            .iter()
            .map(|b| b.value())
            .collect();
        Self::with_bandwidths(ensemble, &h)
    }

    pub fn with_bandwidths(ensemble: &ExposureEnsemble, h: &[f64]) -> Result<Self> {
        let (n, m) = (ensemble.n(), ensemble.m());
        if h.len() != n {
            return Err(Error::Dimension(format!(
                "{} bandwidths for {n} rows",
                h.len()
            )));
        }
        if let Some(i) = h.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("bandwidth", format!("row {i}: {}", h[i])));
        }
        let mut rows = Vec::with_capacity(n * m);
        for i in 0..n {
            let start = rows.len();
            rows.extend_from_slice(ensemble.row(i));
            rows[start..].sort_by(f64::total_cmp);
        }
        Ok(Self {
            n,
            m,
            rows,
            h2: h.iter().map(|v| v * v).collect(),
            buf: vec![0.0; m],
            sampling: UkdeSampling::default(),
            components: vec![0; n],
        })
    }

    pub fn with_sampling(mut self, sampling: UkdeSampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.h2.iter().map(|v| v.sqrt()).collect()
    }

    /// Component chosen for each data point in the last update, as an index
    /// into that row sorted ascending.
    pub fn last_components(&self) -> &[usize] {
        &self.components
    }

    pub(crate) fn update<R: Rng + ?Sized>(
        &mut self,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
        z: &mut DVector<f64>,
        counts: &mut OpCounts,
        rng: &mut R,
    ) -> Result<()> {
        let m = self.m;
        for i in 0..self.n {
            let (w, r, h2) = (omega[i], target[i], self.h2[i]);
            if !r.is_finite() || !(w > 0.0) || !w.is_finite() {
                return Err(Error::DegenerateWeights { index: Some(i) });
            }
            let row = &self.rows[i * m..(i + 1) * m];
            let kappa = theta * theta * h2 * w;
            let a = w / (1.0 + kappa);
            let j = match self.sampling {
                UkdeSampling::Rejection => rejection_pick(row, theta, a, r, counts, rng),
                UkdeSampling::Enumerate => None,
            };
            let j = match j {
                Some(j) => j,
                None => {
                    for (b, &zs) in self.buf.iter_mut().zip(row) {
                        let d = r - theta * zs;
                        *b = -0.5 * a * d * d;
                    }
                    counts.kernel_evaluations += m as u64;
                    sample_categorical_in_place(&mut self.buf, rng).map_err(|e| match e {
                        Error::DegenerateWeights { .. } | Error::InvalidParameter { .. } => {
                            Error::DegenerateWeights { index: Some(i) }
                        }
                        other => other,
                    })?
                }
            };
            self.components[i] = j;
            let mean = (r * theta * h2 * w + row[j]) / (1.0 + kappa);
            let sd = (h2 / (1.0 + kappa)).sqrt();
            let u: f64 = StandardNormal.sample(rng);
            z[i] = mean + sd * u;
        }
        Ok(())
    }
}

// Uniform proposals accepted with probability exp(-½a(d_j² - d_min²)).
fn rejection_pick<R: Rng + ?Sized>(
    row: &[f64],
    theta: f64,
    a: f64,
    r: f64,
    counts: &mut OpCounts,
    rng: &mut R,
) -> Option<usize> {
    let m = row.len();
    if theta == 0.0 || a == 0.0 {
        return Some(rng.random_range(0..m));
    }
    let centre = r / theta;
    let k = row.partition_point(|&v| v < centre);
    let mut dmin = f64::INFINITY;
    for idx in [k.wrapping_sub(1), k] {
        if let Some(&v) = row.get(idx) {
            dmin = dmin.min((r - theta * v).abs());
        }
    }
    let base = dmin * dmin;
    for _ in 0..MAX_REJECTIONS {
        let j = rng.random_range(0..m);
        let d = r - theta * row[j];
        counts.kernel_evaluations += 1;
        let log_accept = -0.5 * a * (d * d - base);
        if log_accept >= 0.0 || rng.random::<f64>() < log_accept.exp() {
            return Some(j);
        }
    }
    None
}
