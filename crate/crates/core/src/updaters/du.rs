use nalgebra::DVector;
use rand::Rng;

use super::OpCounts;
use crate::distributions::sample_categorical_in_place;
use crate::error::Result;
use crate::model::ExposureEnsemble;

/// Discrete-uniform prior over the columns of the ensemble.
#[derive(Debug, Clone)]
pub struct DuUpdater<'a> {
    ensemble: &'a ExposureEnsemble,
    metropolis: bool,
    current: Option<usize>,
    buf: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

impl<'a> DuUpdater<'a> {
    pub fn new(ensemble: &'a ExposureEnsemble, metropolis: bool) -> Self {
        Self {
            ensemble,
            metropolis,
            current: None,
            buf: vec![0.0; ensemble.m()],
            accepted: 0,
            proposed: 0,
        }
    }

    /// Column held by the chain, if one has been chosen.
    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn set_current(&mut self, j: Option<usize>) {
        self.current = j;
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    /// `-½ Σ_i ω_i (θ z*_ij - r_i)²`.
    pub fn column_logweight(
        &self,
        j: usize,
        theta: f64,
        omega: &DVector<f64>,
        target: &DVector<f64>,
    ) -> f64 {
        let col = self.ensemble.column(j);
        let mut s = 0.0;
        for i in 0..col.len() {
            let d = theta * col[i] - target[i];
            s += omega[i] * d * d;
        }
        -0.5 * s
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
        let m = self.ensemble.m();
        let j = if self.metropolis {
            let cur = match self.current {
                Some(c) => c,
                // start from a prior draw
                None => rng.random_range(0..m),
            };
            let prop = rng.random_range(0..m);
            counts.kernel_evaluations += 2;
            self.proposed += 1;
            let log_ratio = self.column_logweight(prop, theta, omega, target)
                - self.column_logweight(cur, theta, omega, target);
            if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
                self.accepted += 1;
                prop
            } else {
                cur
            }
        } else {
            for j in 0..m {
                self.buf[j] = self.column_logweight(j, theta, omega, target);
            }
            counts.kernel_evaluations += m as u64;
            sample_categorical_in_place(&mut self.buf, rng)?
        };
        self.current = Some(j);
        z.copy_from_slice(self.ensemble.column(j));
        Ok(())
    }
}
