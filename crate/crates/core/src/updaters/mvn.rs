use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::{isotropic, standard_normals, OpCounts, Spectral};
use crate::bandwidth::with_jitter;
use crate::error::{Error, Result};
use crate::model::{ExposureEnsemble, RowSummary};

/// `z ~ MVN(ẑ, Σ̂)` prior. The full conditional is normal with precision
/// `θ²Ω + Σ̂⁻¹`; it is sampled through the factor `Σ̂ = LLᵀ` so that `Σ̂⁻¹`
/// is never formed.
#[derive(Debug, Clone)]
pub struct MvnUpdater {
    zhat: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    // L⁻¹ẑ
    whitened_zhat: DVector<f64>,
    spectral: Option<(Spectral, DVector<f64>)>,
}

impl MvnUpdater {
    pub fn new(ensemble: &ExposureEnsemble, summary: RowSummary) -> Result<Self> {
        let sigma = with_jitter(&ensemble.covariance())?;
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::Factorization {
                what: "ensemble covariance",
                detail: format!(
                    "not positive definite after jitter (n = {}, m = {})",
                    ensemble.n(),
                    ensemble.m()
                ),
            })?
            .l();
        let zhat = ensemble.zhat(summary);
        let whitened_zhat =
            chol.solve_lower_triangular(&zhat)
                .ok_or_else(|| Error::Factorization {
                    what: "ensemble covariance",
                    detail: "singular factor".into(),
                })?;
        Ok(Self {
            zhat,
            sigma,
            chol,
            whitened_zhat,
            spectral: None,
        })
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.zhat
    }

    /// The regularized prior covariance.
    pub fn prior_covariance(&self) -> &DMatrix<f64> {
        &self.sigma
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
        match isotropic(omega) {
            Some(w) => self.update_isotropic(theta, w, target, z, rng),
            None => self.update_general(theta, omega, target, z, counts, rng),
        }
    }

    // Σ̂ = QΛQᵀ makes the posterior precision diagonal in the eigenbasis.
    fn update_isotropic<R: Rng + ?Sized>(
        &mut self,
        theta: f64,
        w: f64,
        target: &DVector<f64>,
        z: &mut DVector<f64>,
        rng: &mut R,
    ) -> Result<()> {
        if self.spectral.is_none() {
            let s = Spectral::new(&self.sigma, "ensemble covariance")?;
            let scaled = s.q.tr_mul(&self.zhat).component_div(&s.lambda);
            self.spectral = Some((s, scaled));
        }
        let (s, zhat_scaled) = self.spectral.as_ref().expect("built above");
        let rotated = s.q.tr_mul(target);
        let u = standard_normals(target.len(), rng);
        let t2w = theta * theta * w;
        let coords = DVector::from_fn(target.len(), |k, _| {
            let a = t2w + 1.0 / s.lambda[k];
            (theta * w * rotated[k] + zhat_scaled[k]) / a + u[k] / a.sqrt()
        });
        *z = &s.q * coords;
        Ok(())
    }

    // With B = I + θ²LᵀΩL = MMᵀ: mean = L B⁻¹(θLᵀΩr + L⁻¹ẑ), cov = L B⁻¹ Lᵀ.
    fn update_general<R: Rng + ?Sized>(
        &mut self,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
        z: &mut DVector<f64>,
        counts: &mut OpCounts,
        rng: &mut R,
    ) -> Result<()> {
        let n = target.len();
        let mut scaled = self.chol.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= theta * omega[i].sqrt();
        }
        let mut b = scaled.tr_mul(&scaled);
        for i in 0..n {
            b[(i, i)] += 1.0;
        }
        let factor = Cholesky::new(b).ok_or_else(|| Error::Factorization {
            what: "MVN posterior precision",
            detail: format!("theta = {theta}"),
        })?;
        counts.factorizations += 1;
        let weighted = target.component_mul(omega);
        let rhs = self.chol.tr_mul(&weighted) * theta + &self.whitened_zhat;
        let mut inner = factor.solve(&rhs);
        let u = standard_normals(n, rng);
        let noise = factor
            .l_dirty()
            .tr_solve_lower_triangular(&u)
            .ok_or_else(|| Error::Factorization {
                what: "MVN posterior precision",
                detail: "singular factor".into(),
            })?;
        counts.triangular_solves += 3;
        inner += noise;
        *z = &self.chol * inner;
        Ok(())
    }
}
