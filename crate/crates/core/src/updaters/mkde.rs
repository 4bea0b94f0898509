use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use super::{isotropic, standard_normals, OpCounts, Spectral};
use crate::bandwidth::{bandwidth_scott_matrix, BandwidthMatrix};
use crate::distributions::sample_categorical_in_place;
use crate::error::{Error, Result};
use crate::model::ExposureEnsemble;

/// Multivariate Gaussian-KDE prior `z ~ (1/m) Σ_j MVN(z*_.j, H)`.
///
/// With `A = θ²Ω + H⁻¹` and `b_j = θΩr + H⁻¹z*_.j` the component weights are
/// `log d_j = -½ z*_.jᵀH⁻¹z*_.j + ½ b_jᵀA⁻¹b_j + const`, and given `j` the
/// draw is `MVN(A⁻¹b_j, A⁻¹)`.
#[derive(Debug, Clone)]
pub struct MkdeUpdater {
    bandwidth: BandwidthMatrix,
    // H⁻¹Z*
    hinv_z: DMatrix<f64>,
    // z*_.jᵀ H⁻¹ z*_.j
    quad: Vec<f64>,
    spectral: Option<RotatedEnsemble>,
    ensemble: DMatrix<f64>,
    buf: Vec<f64>,
    last_component: Option<usize>,
}

#[derive(Debug, Clone)]
struct RotatedEnsemble {
    eig: Spectral,
    // QᵀZ* and its elementwise square
    rotated: DMatrix<f64>,
    rotated_sq: DMatrix<f64>,
}

impl MkdeUpdater {
    pub fn new(ensemble: &ExposureEnsemble) -> Result<Self> {
        Self::with_bandwidth(ensemble, bandwidth_scott_matrix(ensemble)?)
    }

    pub fn with_bandwidth(ensemble: &ExposureEnsemble, bandwidth: BandwidthMatrix) -> Result<Self> {
        if bandwidth.dim() != ensemble.n() {
            return Err(Error::Dimension(format!(
                "bandwidth is {0}x{0}, ensemble has {1} rows",
                bandwidth.dim(),
                ensemble.n()
            )));
        }
        let z = ensemble.draws().clone();
        let hinv_z = bandwidth.inverse() * &z;
        let quad = (0..z.ncols())
            .map(|j| z.column(j).dot(&hinv_z.column(j)))
            .collect();
        Ok(Self {
            bandwidth,
            hinv_z,
            quad,
            spectral: None,
            buf: vec![0.0; z.ncols()],
            ensemble: z,
            last_component: None,
        })
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.bandwidth
    }

    pub fn last_component(&self) -> Option<usize> {
        self.last_component
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
            Some(w) => self.update_isotropic(theta, w, target, z, counts, rng),
            None => self.update_general(theta, omega, target, z, counts, rng),
        }
    }

    /// Weights from the general path, for testing against dense evaluation.
    pub fn component_logweights(
        &self,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
    ) -> Result<Vec<f64>> {
        let (_, y) = self.solve_components(theta, omega, target, &mut OpCounts::default())?;
        Ok((0..y.ncols())
            .map(|j| -0.5 * self.quad[j] + 0.5 * y.column(j).norm_squared())
            .collect())
    }

    fn solve_components(
        &self,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
        counts: &mut OpCounts,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = target.len();
        let mut a = self.bandwidth.inverse().clone();
        for i in 0..n {
            a[(i, i)] += theta * theta * omega[i];
        }
        let l = Cholesky::new(a)
            .ok_or_else(|| Error::Factorization {
                what: "MKDE posterior precision",
                detail: format!("theta = {theta}"),
            })?
            .unpack();
        counts.factorizations += 1;
        let shift = target.component_mul(omega) * theta;
        let mut b = self.hinv_z.clone();
        for mut col in b.column_iter_mut() {
            col += &shift;
        }
        l.solve_lower_triangular_mut(&mut b);
        counts.triangular_solves += b.ncols() as u64;
        Ok((l, b))
    }

    fn update_general<R: Rng + ?Sized>(
        &mut self,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
        z: &mut DVector<f64>,
        counts: &mut OpCounts,
        rng: &mut R,
    ) -> Result<()> {
        let (l, y) = self.solve_components(theta, omega, target, counts)?;
        for (j, w) in self.buf.iter_mut().enumerate() {
            *w = -0.5 * self.quad[j] + 0.5 * y.column(j).norm_squared();
        }
        counts.kernel_evaluations += self.buf.len() as u64;
        let j = sample_categorical_in_place(&mut self.buf, rng)?;
        self.last_component = Some(j);
        let mut v = y.column(j) + standard_normals(target.len(), rng);
        if !l.tr_solve_lower_triangular_mut(&mut v) {
            return Err(Error::Factorization {
                what: "MKDE posterior precision",
                detail: "singular factor".into(),
            });
        }
        counts.triangular_solves += 1;
        *z = v;
        Ok(())
    }

    // In the eigenbasis of H the posterior precision is diagonal, so the
    // weights cost O(nm) with no factorization.
    fn update_isotropic<R: Rng + ?Sized>(
        &mut self,
        theta: f64,
        w: f64,
        target: &DVector<f64>,
        z: &mut DVector<f64>,
        counts: &mut OpCounts,
        rng: &mut R,
    ) -> Result<()> {
        if self.spectral.is_none() {
            let eig = Spectral::new(self.bandwidth.regularized(), "bandwidth matrix")?;
            let rotated = eig.q.tr_mul(&self.ensemble);
            let rotated_sq = rotated.map(|v| v * v);
            self.spectral = Some(RotatedEnsemble {
                eig,
                rotated,
                rotated_sq,
            });
        }
        let sp = self.spectral.as_ref().expect("built above");
        let n = target.len();
        let s = sp.eig.q.tr_mul(target);
        let lambda = &sp.eig.lambda;
        let t2w = theta * theta * w;
        let a = DVector::from_fn(n, |k, _| t2w + 1.0 / lambda[k]);
        let lin = DVector::from_fn(n, |k, _| theta * w * s[k] / (lambda[k] * a[k]));
        let quad = DVector::from_fn(n, |k, _| t2w / (t2w * lambda[k] + 1.0));
        for (j, out) in self.buf.iter_mut().enumerate() {
            *out = sp.rotated.column(j).dot(&lin) - 0.5 * sp.rotated_sq.column(j).dot(&quad);
        }
        counts.kernel_evaluations += self.buf.len() as u64;
        let j = sample_categorical_in_place(&mut self.buf, rng)?;
        self.last_component = Some(j);
        let u = standard_normals(n, rng);
        let c = sp.rotated.column(j);
        let coords = DVector::from_fn(n, |k, _| {
            (theta * w * s[k] + c[k] / lambda[k]) / a[k] + u[k] / a[k].sqrt()
        });
        *z = &sp.eig.q * coords;
        Ok(())
    }
}
