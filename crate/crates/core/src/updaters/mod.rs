//! Exposure-uncertainty propagation: the latent-exposure updates used inside
//! the sampler and the fixed-exposure preparations.
//!
//! Every latent update conditions on `θ`, the auxiliary precisions `ω` and the
//! residual target `r = Ỹ - O - Xβ` (see
//! [`whitened_residual_target`](crate::model::whitened_residual_target)).

mod du;
mod fixed;
mod mkde;
mod mvn;
mod ukde;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

pub use du::DuUpdater;
pub use fixed::{assign_z_mia, mi_schedule, plugin_exposure};
pub use mkde::MkdeUpdater;
pub use mvn::MvnUpdater;
pub use ukde::{ukde_component_logweights, UkdeSampling, UkdeUpdater};

use crate::error::{Error, Result};
use crate::model::{
    whitened_residual_target, ChainState, ExposureEnsemble, HealthDataset, Method, MethodSpec,
};

/// Counts of the expensive linear-algebra steps, for cost assertions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub factorizations: u64,
    pub triangular_solves: u64,
    pub kernel_evaluations: u64,
}

/// `Some(w)` when every entry of `omega` equals `w`.
pub(crate) fn isotropic(omega: &DVector<f64>) -> Option<f64> {
    let w = *omega.iter().next()?;
    omega.iter().all(|&v| v == w).then_some(w)
}

/// Eigendecomposition `QΛQᵀ` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub(crate) struct Spectral {
    pub q: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl Spectral {
    pub fn new(a: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        let eig = SymmetricEigen::new(a.clone());
        if let Some(k) = eig
            .eigenvalues
            .iter()
            .position(|&l| !(l > 0.0) || !l.is_finite())
        {
            return Err(Error::Factorization {
                what,
                detail: format!("eigenvalue {k} is {}", eig.eigenvalues[k]),
            });
        }
        Ok(Self {
            q: eig.eigenvectors,
            lambda: eig.eigenvalues,
        })
    }
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Per-chain state of one propagation method, with its precomputed caches.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per chain, built once
pub enum UpdaterWorkspace<'a> {
    /// Plug-in and MI: the exposure never changes during sampling.
    Fixed,
    Mia(&'a ExposureEnsemble),
    Du(DuUpdater<'a>),
    Mvn(MvnUpdater),
    Ukde(UkdeUpdater),
    Mkde(MkdeUpdater),
}

impl<'a> UpdaterWorkspace<'a> {
    pub fn prepare(spec: &MethodSpec, ensemble: &'a ExposureEnsemble) -> Result<Self> {
        Ok(match spec.method {
            Method::PlugIn | Method::Mi => UpdaterWorkspace::Fixed,
            Method::Mia => UpdaterWorkspace::Mia(ensemble),
            Method::Du => UpdaterWorkspace::Du(DuUpdater::new(ensemble, spec.du_metropolis)),
            Method::Mvn => UpdaterWorkspace::Mvn(MvnUpdater::new(ensemble, spec.summary)?),
            Method::Ukde => {
                UpdaterWorkspace::Ukde(UkdeUpdater::new(ensemble, spec.ukde_bandwidth)?)
            }
            Method::Mkde => UpdaterWorkspace::Mkde(MkdeUpdater::new(ensemble)?),
        })
    }

    /// Whether `z` changes between sweeps.
    pub fn is_latent(&self) -> bool {
        !matches!(self, UpdaterWorkspace::Fixed)
    }

    /// Column reassignment at the top of a sweep (MIA only).
    pub fn begin_sweep<R: Rng + ?Sized>(&mut self, z: &mut DVector<f64>, rng: &mut R) {
        if let UpdaterWorkspace::Mia(ens) = self {
            *z = assign_z_mia(ens, rng).1;
        }
    }

    /// Redraw `z` from its full conditional (no-op for the fixed and MIA methods).
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
        z: &mut DVector<f64>,
        counts: &mut OpCounts,
        rng: &mut R,
    ) -> Result<()> {
        match self {
            UpdaterWorkspace::Fixed | UpdaterWorkspace::Mia(_) => Ok(()),
            UpdaterWorkspace::Du(u) => u.update(theta, omega, target, z, counts, rng),
            UpdaterWorkspace::Mvn(u) => u.update(theta, omega, target, z, counts, rng),
            UpdaterWorkspace::Ukde(u) => u.update(theta, omega, target, z, counts, rng),
            UpdaterWorkspace::Mkde(u) => u.update(theta, omega, target, z, counts, rng),
        }
    }
}

fn one_shot<R: Rng + ?Sized>(
    workspace: &mut UpdaterWorkspace<'_>,
    state: &ChainState,
    data: &HealthDataset,
    omega: &DVector<f64>,
    ytilde: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if omega.len() != data.n() || ytilde.len() != data.n() {
        return Err(Error::Dimension(
            "omega/Ytilde length differs from the data".into(),
        ));
    }
    let target = whitened_residual_target(state, data, ytilde);
    let mut z = state.z.clone();
    workspace.update(
        state.theta,
        omega,
        &target,
        &mut z,
        &mut OpCounts::default(),
        rng,
    )?;
    Ok(z)
}

/// One MVN-prior draw of `z` from its full conditional.
pub fn update_z_mvn<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    ensemble: &ExposureEnsemble,
    spec: &MethodSpec,
    omega: &DVector<f64>,
    ytilde: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut ws = UpdaterWorkspace::Mvn(MvnUpdater::new(ensemble, spec.summary)?);
    one_shot(&mut ws, state, data, omega, ytilde, rng)
}

/// One univariate-KDE draw of `z` (each entry independently).
pub fn update_z_ukde<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    ensemble: &ExposureEnsemble,
    spec: &MethodSpec,
    omega: &DVector<f64>,
    ytilde: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut ws = UpdaterWorkspace::Ukde(UkdeUpdater::new(ensemble, spec.ukde_bandwidth)?);
    one_shot(&mut ws, state, data, omega, ytilde, rng)
}

/// One multivariate-KDE joint draw of `z`.
pub fn update_z_mkde<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    ensemble: &ExposureEnsemble,
    omega: &DVector<f64>,
    ytilde: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut ws = UpdaterWorkspace::Mkde(MkdeUpdater::new(ensemble)?);
    one_shot(&mut ws, state, data, omega, ytilde, rng)
}

/// One DU draw: `z` becomes a column of the ensemble. In Metropolis mode
/// the current column is taken to be the one equal to `state.z`, if any.
pub fn update_z_du<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    ensemble: &ExposureEnsemble,
    spec: &MethodSpec,
    omega: &DVector<f64>,
    ytilde: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let mut du = DuUpdater::new(ensemble, spec.du_metropolis);
    du.set_current((0..ensemble.m()).find(|&j| ensemble.column(j) == state.z.as_slice()));
    let mut ws = UpdaterWorkspace::Du(du);
    one_shot(&mut ws, state, data, omega, ytilde, rng)
}
