use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::distributions::{sample_categorical_in_place, sample_inverse_gamma, softplus};
use crate::error::{Error, Result};
use crate::model::{ChainState, Family, HealthDataset, PriorSpec};
use crate::updaters::standard_normals;

/// `W = [X | z]`.
pub(crate) fn design_with_exposure(x: &DMatrix<f64>, z: &DVector<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut w = DMatrix::zeros(n, p + 1);
    w.columns_mut(0, p).copy_from(x);
    w.set_column(p, z);
    w
}

/// Joint draw of `γ = (β, θ)` from its normal full conditional with
/// precision `WᵀΩW + B₀⁻¹` and mean `V·WᵀΩ(Ỹ - O)`.
pub fn update_regression<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    omega: &DVector<f64>,
    ytilde: &DVector<f64>,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    let w = design_with_exposure(data.x(), &state.z);
    let q = w.ncols();
    let mut weighted = w.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= omega[i];
    }
    let mut precision = w.tr_mul(&weighted);
    let tau = prior.coef_precision();
    for k in 0..q {
        precision[(k, k)] += tau;
    }
    let rhs = weighted.tr_mul(&(ytilde - data.offset()));
    let chol = Cholesky::new(precision).ok_or_else(|| Error::Factorization {
        what: "regression precision",
        detail: format!("theta = {}, design has {q} columns", state.theta),
    })?;
    let mean = chol.solve(&rhs);
    let noise = chol
        .l_dirty()
        .tr_solve_lower_triangular(&standard_normals(q, rng))
        .ok_or_else(|| Error::Factorization {
            what: "regression precision",
            detail: "singular factor".into(),
        })?;
    let gamma = mean + noise;
    let p = q - 1;
    Ok((gamma.rows(0, p).into_owned(), gamma[p]))
}

/// `σ² ~ IG(a₀ + n/2, b₀ + ½ Σ (Y - O - Xβ - zθ)²)`.
pub fn update_sigma2<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<f64> {
    if data.family() != Family::Gaussian {
        return Err(Error::invalid(
            "family",
            "sigma2 update is for gaussian outcomes",
        ));
    }
    let fitted = data.linear_predictor(&state.beta, &state.z, state.theta);
    let rss = (data.y() - fitted).norm_squared();
    sample_inverse_gamma(
        prior.sigma2_shape + 0.5 * data.n() as f64,
        prior.sigma2_rate + 0.5 * rss,
        rng,
    )
}

/// Per-`r` terms of the negative-binomial log likelihood that do not depend
/// on the linear predictor: `T[r] = Σ_t log Γ(y_t + r) - log Γ(r) - log Γ(y_t + 1)`.
#[derive(Debug, Clone)]
pub struct DispersionTable {
    terms: Vec<f64>,
}

impl DispersionTable {
    pub fn new(y: &DVector<f64>, r_max: u32) -> Self {
        let lg_y1: f64 = y.iter().map(|&v| ln_gamma(v + 1.0)).sum();
        let terms = (1..=r_max)
            .map(|r| {
                let rf = f64::from(r);
                y.iter().map(|&v| ln_gamma(v + rf)).sum::<f64>()
                    - y.len() as f64 * ln_gamma(rf)
                    - lg_y1
            })
            .collect();
        Self { terms }
    }

    pub fn r_max(&self) -> u32 {
        self.terms.len() as u32
    }

    /// Log full-conditional weights of `r = 1..r_max` up to a constant.
    pub fn logweights(&self, softplus_sum: f64) -> Vec<f64> {
        self.terms
            .iter()
            .enumerate()
            .map(|(k, t)| t - (k + 1) as f64 * softplus_sum)
            .collect()
    }

    pub fn draw<R: Rng + ?Sized>(
        &self,
        state: &ChainState,
        data: &HealthDataset,
        rng: &mut R,
    ) -> Result<u32> {
        let psi = data.linear_predictor(&state.beta, &state.z, state.theta);
        let s: f64 = psi.iter().map(|&v| softplus(v)).sum();
        let mut lw = self.logweights(s);
        Ok(sample_categorical_in_place(&mut lw, rng)? as u32 + 1)
    }
}

/// Griddy-Gibbs draw of the dispersion on `{1, …, r_max}` under a discrete
/// uniform prior. `ω` must be redrawn afterwards.
pub fn update_dispersion_r<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<u32> {
    if data.family() != Family::NegBin {
        return Err(Error::invalid(
            "family",
            "dispersion update is for negative-binomial outcomes",
        ));
    }
    DispersionTable::new(data.y(), prior.r_max).draw(state, data, rng)
}
