use nalgebra::DVector;
use rand::Rng;

use crate::model::{ExposureEnsemble, RowSummary};

/// Row summaries `ẑ_i = T(z*_i.)`, held fixed during sampling.
pub fn plugin_exposure(ensemble: &ExposureEnsemble, summary: RowSummary) -> DVector<f64> {
    ensemble.zhat(summary)
}

/// A uniformly chosen column, drawn with replacement each sweep.
pub fn assign_z_mia<R: Rng + ?Sized>(
    ensemble: &ExposureEnsemble,
    rng: &mut R,
) -> (usize, DVector<f64>) {
    let j = rng.random_range(0..ensemble.m());
    (j, ensemble.column_vector(j))
}

/// The `m` fixed exposure vectors of multiple imputation, one fit each.
pub fn mi_schedule(
    ensemble: &ExposureEnsemble,
) -> impl ExactSizeIterator<Item = DVector<f64>> + '_ {
    (0..ensemble.m()).map(move |j| ensemble.column_vector(j))
}
