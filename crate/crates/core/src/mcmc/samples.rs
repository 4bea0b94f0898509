use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, HealthDataset};
use crate::stats;

/// Iteration budget of an MCMC run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations_total: usize,
    pub burn_in: usize,
    pub thin: usize,
    #[serde(default = "one")]
    pub chains: usize,
}

fn one() -> usize {
    1
}

impl SamplerConfig {
    /// 11000 sweeps, 1000 burn-in, thin 10: 1000 retained draws.
    pub fn simulation() -> Self {
        Self {
            iterations_total: 11_000,
            burn_in: 1_000,
            thin: 10,
            chains: 1,
        }
    }

    /// 220000 sweeps, 20000 burn-in, thin 20: 10000 retained draws.
    pub fn application() -> Self {
        Self {
            iterations_total: 220_000,
            burn_in: 20_000,
            thin: 20,
            chains: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations_total == 0 || self.thin == 0 || self.chains == 0 {
            return Err(Error::invalid(
                "sampler",
                "iterations, thin and chains must be positive",
            ));
        }
        if self.burn_in >= self.iterations_total {
            return Err(Error::invalid(
                "burn_in",
                format!(
                    "{} is not below iterations_total {}",
                    self.burn_in, self.iterations_total
                ),
            ));
        }
        if !(self.iterations_total - self.burn_in).is_multiple_of(self.thin) {
            return Err(Error::invalid(
                "thin",
                format!(
                    "{} does not divide {}",
                    self.thin,
                    self.iterations_total - self.burn_in
                ),
            ));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations_total - self.burn_in) / self.thin
    }

    /// Whether the 0-based sweep `t` is kept.
    pub fn keeps(&self, t: usize) -> bool {
        t >= self.burn_in && (t + 1 - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Posterior mean, sd and equal-tailed 95% interval of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalSummary {
    pub fn from_draws(draws: &[f64]) -> Self {
        let s = stats::sorted(draws);
        Self {
            mean: stats::mean(draws),
            sd: if draws.len() > 1 {
                stats::sd(draws)
            } else {
                0.0
            },
            lower: stats::quantile_sorted(&s, 0.025),
            upper: stats::quantile_sorted(&s, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn excludes_zero(&self) -> bool {
        !self.covers(0.0)
    }
}

/// Retained draws, one row per draw. Rows carry a group label: the chain
/// for MCMC output, the source column for pooled multiple imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    names: Vec<String>,
    values: Vec<f64>,
    groups: Vec<u32>,
    group_label: &'static str,
    pub method: String,
    pub seed: u64,
    pub stream: u64,
}

impl PosteriorSamples {
    pub fn new(
        names: Vec<String>,
        group_label: &'static str,
        method: impl Into<String>,
        seed: u64,
        stream: u64,
    ) -> Self {
        Self {
            names,
            values: Vec::new(),
            groups: Vec::new(),
            group_label,
            method: method.into(),
            seed,
            stream,
        }
    }

    /// `beta_0..beta_{p-1}`, `theta`, then `sigma2_eps` or `r` by family.
    pub fn parameter_names(data: &HealthDataset) -> Vec<String> {
        let mut names: Vec<String> = (0..data.p()).map(|k| format!("beta_{k}")).collect();
        names.push("theta".into());
        match data.family() {
            Family::Gaussian => names.push("sigma2_eps".into()),
            Family::NegBin => names.push("r".into()),
            Family::Bernoulli => {}
        }
        names
    }

    pub fn push(&mut self, group: u32, row: &[f64]) {
        debug_assert_eq!(row.len(), self.names.len());
        self.values.extend_from_slice(row);
        self.groups.push(group);
    }

    /// Append all rows of `other` (same parameters).
    pub fn extend(&mut self, other: &PosteriorSamples) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Dimension("parameter names differ".into()));
        }
        self.values.extend_from_slice(&other.values);
        self.groups.extend_from_slice(&other.groups);
        Ok(())
    }

    pub fn relabel_groups(&mut self, group: u32) {
        self.groups.iter_mut().for_each(|g| *g = group);
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    pub fn group_label(&self) -> &'static str {
        self.group_label
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let q = self.names.len();
        &self.values[k * q..(k + 1) * q]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        let q = self.names.len();
        self.values.iter().skip(index).step_by(q).copied().collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.index_of(name).map(|k| self.column(k))
    }

    pub fn theta(&self) -> Vec<f64> {
        self.column_by_name("theta")
            .expect("theta is always sampled")
    }

    pub fn theta_summary(&self) -> IntervalSummary {
        IntervalSummary::from_draws(&self.theta())
    }

    /// Draws of one group only.
    pub fn group_column(&self, index: usize, group: u32) -> Vec<f64> {
        (0..self.len())
            .filter(|&k| self.groups[k] == group)
            .map(|k| self.row(k)[index])
            .collect()
    }

    /// Comma-separated text with a header row; floats use the shortest
    /// representation that round-trips.
    pub fn write_delimited<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "{}", self.group_label)?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", self.groups[k])?;
            for v in self.row(k) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
