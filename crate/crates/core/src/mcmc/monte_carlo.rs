use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::regression::design_with_exposure;
use super::samples::PosteriorSamples;
use crate::distributions::sample_inverse_gamma;
use crate::error::{Error, Result};
use crate::model::{CoefPrior, Family, HealthDataset, PriorSpec};
use crate::rng::RandomSource;
use crate::updaters::standard_normals;

/// One exact draw from the flat-prior Gaussian linear model.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateDraw {
    pub coef: DVector<f64>,
    pub sigma2: f64,
}

/// Independent posterior draws for `y = Wγ + ε` under a flat prior on `γ`
/// and `σ² ~ IG(a₀, b₀)`: `σ² ~ IG(a₀ + (n-q)/2, b₀ + RSS/2)` and
/// `γ | σ² ~ MVN(γ̂, σ²(WᵀW)⁻¹)`.
pub fn conjugate_flat_draws<R: Rng + ?Sized>(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
    shape0: f64,
    rate0: f64,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<ConjugateDraw>> {
    let (n, q) = w.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {n} design rows",
            y.len()
        )));
    }
    if n <= q {
        return Err(Error::invalid(
            "design",
            format!("{n} rows for {q} coefficients"),
        ));
    }
    let chol = Cholesky::new(w.tr_mul(w)).ok_or_else(|| Error::Factorization {
        what: "design cross-product",
        detail: format!("{n}x{q} design is rank deficient"),
    })?;
    let ols = chol.solve(&w.tr_mul(y));
    let rss = (y - w * &ols).norm_squared();
    let shape = shape0 + 0.5 * (n - q) as f64;
    let rate = rate0 + 0.5 * rss;
    let l = chol.l();
    (0..draws)
        .map(|_| {
            let sigma2 = sample_inverse_gamma(shape, rate, rng)?;
            let noise = l
                .tr_solve_lower_triangular(&standard_normals(q, rng))
                .ok_or_else(|| Error::Factorization {
                    what: "design cross-product",
                    detail: "singular factor".into(),
                })?;
            Ok(ConjugateDraw {
                coef: &ols + noise * sigma2.sqrt(),
                sigma2,
            })
        })
        .collect()
}

/// Exact Monte Carlo posterior for a Gaussian outcome with the exposure
/// fixed at `z`, under a flat coefficient prior.
pub fn run_monte_carlo_gaussian(
    data: &HealthDataset,
    z: &DVector<f64>,
    prior: &PriorSpec,
    draws: usize,
    rng: &mut RandomSource,
) -> Result<PosteriorSamples> {
    if data.family() != Family::Gaussian {
        return Err(Error::invalid(
            "family",
            "Monte Carlo sampler needs a gaussian outcome",
        ));
    }
    if prior.coef != CoefPrior::Flat {
        return Err(Error::invalid(
            "coef_prior",
            "Monte Carlo sampler needs a flat coefficient prior",
        ));
    }
    if z.len() != data.n() {
        return Err(Error::Dimension(
            "fixed exposure length differs from the data".into(),
        ));
    }
    let w = design_with_exposure(data.x(), z);
    let y = data.y() - data.offset();
    let names = PosteriorSamples::parameter_names(data);
    let mut out = PosteriorSamples::new(names, "chain", "monte_carlo", rng.seed(), rng.stream_id());
    let mut row = Vec::with_capacity(w.ncols() + 1);
    for d in conjugate_flat_draws(&w, &y, prior.sigma2_shape, prior.sigma2_rate, draws, rng)? {
        row.clear();
        row.extend(d.coef.iter());
        row.push(d.sigma2);
        out.push(0, &row);
    }
    Ok(out)
}
