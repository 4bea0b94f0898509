//! Data model for the two-stage problem and the likelihood augmentation
//! shared by every exposure update.
//!
//! For all three outcome families the exposure full conditional takes the
//! form `exp{-½ (O + Xβ + zθ - Ỹ)ᵀ Ω (O + Xβ + zθ - Ỹ)} f(z)` where `Ω` is
//! diagonal. Gaussian outcomes have `Ω = I/σ²` and `Ỹ = Y`; the logit
//! families draw `Ω` from Pólya-Gamma laws.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{self, BandwidthSelector, UnivariateBandwidth};
use crate::distributions::{sample_polya_gamma, PolyaGammaParams};
use crate::error::{Error, Result};
use crate::stats;

/// Smallest auxiliary precision kept; Pólya-Gamma draws below this have
/// negligible probability and would make `Ỹ` overflow.
pub const MIN_OMEGA: f64 = 1e-12;

/// Largest dispersion value on the discrete uniform prior.
pub const DEFAULT_R_MAX: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RowSummary {
    #[default]
    Median,
    Mean,
}

impl RowSummary {
    pub fn apply(self, row: &[f64]) -> f64 {
        match self {
            RowSummary::Median => stats::median(row),
            RowSummary::Mean => stats::mean(row),
        }
    }
}

/// `n × m` matrix of posterior predictive exposure draws: row `i` holds the
/// draws for data point `i`, column `j` one joint draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureEnsemble {
    draws: DMatrix<f64>,
    // row-major copy so per-point kernels read contiguous memory
    rows: Vec<f64>,
}

impl ExposureEnsemble {
    pub fn new(draws: DMatrix<f64>) -> Result<Self> {
        let (n, m) = draws.shape();
        if n == 0 || m == 0 {
            return Err(Error::Dimension(format!("ensemble is {n}x{m}")));
        }
        if let Some(pos) = draws.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite ensemble entry at row {}, column {}",
                pos % n,
                pos / n
            )));
        }
        let mut rows = Vec::with_capacity(n * m);
        for i in 0..n {
            rows.extend(draws.row(i).iter());
        }
        Ok(Self { draws, rows })
    }

    pub fn n(&self) -> usize {
        self.draws.nrows()
    }

    pub fn m(&self) -> usize {
        self.draws.ncols()
    }

    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.rows[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.draws.as_slice()[j * n..(j + 1) * n]
    }

    pub fn column_vector(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(self.column(j))
    }

    /// Row summaries `T(z*_i.)`.
    pub fn zhat(&self, summary: RowSummary) -> DVector<f64> {
        DVector::from_iterator(self.n(), (0..self.n()).map(|i| summary.apply(self.row(i))))
    }

    /// Column mean `z̄*`.
    pub fn zbar(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), (0..self.n()).map(|i| stats::mean(self.row(i))))
    }

    /// Sample covariance of the columns, `(1/(m-1)) Σ_j (z*_.j - z̄*)(z*_.j - z̄*)ᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        if m < 2 {
            return DMatrix::zeros(n, n);
        }
        let zbar = self.zbar();
        let mut centered = self.draws.clone();
        for mut col in centered.column_iter_mut() {
            col -= &zbar;
        }
        let mut cov = &centered * centered.transpose();
        cov /= (m - 1) as f64;
        // exact symmetry
        for i in 0..n {
            for k in 0..i {
                let v = 0.5 * (cov[(i, k)] + cov[(k, i)]);
                cov[(i, k)] = v;
                cov[(k, i)] = v;
            }
        }
        cov
    }

    /// Per-row bandwidths `h_i` from the chosen selector.
    pub fn row_bandwidths(&self, selector: BandwidthSelector) -> Result<Vec<UnivariateBandwidth>> {
        (0..self.n())
            .map(|i| {
                bandwidth::select(self.row(i), selector).map_err(|e| match e {
                    Error::DegenerateSample(msg) => {
                        Error::DegenerateSample(format!("row {i}: {msg}"))
                    }
                    other => other,
                })
            })
            .collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.draws.map(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[serde(rename = "gaussian_identity", alias = "gaussian")]
    Gaussian,
    #[serde(rename = "bernoulli_logit", alias = "bernoulli")]
    Bernoulli,
    #[serde(rename = "negbin_logit", alias = "negbin")]
    NegBin,
}

/// Outcomes, covariates (first column the intercept) and offsets.
#[derive(Debug, Clone)]
pub struct HealthDataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    offset: DVector<f64>,
    family: Family,
}

impl HealthDataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        offset: Option<DVector<f64>>,
        family: Family,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("empty outcome vector".into()));
        }
        if x.nrows() != n {
            return Err(Error::Dimension(format!(
                "{} outcomes but {} covariate rows",
                n,
                x.nrows()
            )));
        }
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidData(
                "first covariate column must be all ones".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite covariate".into()));
        }
        let offset = offset.unwrap_or_else(|| DVector::zeros(n));
        if offset.len() != n || offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(
                "offset must be finite with one entry per outcome".into(),
            ));
        }
        for (i, &v) in y.iter().enumerate() {
            let ok = match family {
                Family::Gaussian => v.is_finite(),
                Family::Bernoulli => v == 0.0 || v == 1.0,
                Family::NegBin => v >= 0.0 && v.fract() == 0.0 && v < 1e9,
            };
            if !ok {
                return Err(Error::InvalidData(format!(
                    "outcome {i} = {v} is invalid for {family:?}"
                )));
            }
        }
        if x.ncols() > n {
            return Err(Error::InvalidData(
                "more covariates than observations".into(),
            ));
        }
        let sv = x.clone().svd(false, false).singular_values;
        let (smax, smin) = sv
            .iter()
            .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
        if !(smin > 1e-10 * smax) {
            return Err(Error::InvalidData(
                "covariate matrix is not of full column rank".into(),
            ));
        }
        Ok(Self {
            y,
            x,
            offset,
            family,
        })
    }

    /// Intercept-only design.
    pub fn intercept_only(
        y: DVector<f64>,
        offset: Option<DVector<f64>>,
        family: Family,
    ) -> Result<Self> {
        let n = y.len();
        Self::new(y, DMatrix::from_element(n, 1, 1.0), offset, family)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `O + Xβ + zθ`.
    pub fn linear_predictor(
        &self,
        beta: &DVector<f64>,
        z: &DVector<f64>,
        theta: f64,
    ) -> DVector<f64> {
        let mut eta = &self.x * beta;
        eta += &self.offset;
        eta.axpy(theta, z, 1.0);
        eta
    }
}

/// Current values of every sampled quantity in one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: DVector<f64>,
    pub theta: f64,
    pub z: DVector<f64>,
    pub omega: DVector<f64>,
    pub sigma2_eps: Option<f64>,
    pub r: Option<u32>,
}

impl ChainState {
    /// `β = 0`, `θ = 0`, `z = z0`, `σ² = 1` (Gaussian), `r = 10` (negative
    /// binomial). `ω` is a placeholder for the logit families and is redrawn
    /// at the start of the first sweep.
    pub fn initial(data: &HealthDataset, z0: DVector<f64>) -> Self {
        let n = data.n();
        let (sigma2_eps, r) = match data.family() {
            Family::Gaussian => (Some(1.0), None),
            Family::Bernoulli => (None, None),
            Family::NegBin => (None, Some(10)),
        };
        Self {
            beta: DVector::zeros(data.p()),
            theta: 0.0,
            z: z0,
            omega: DVector::from_element(n, sigma2_eps.map_or(1.0, |s| 1.0 / s)),
            sigma2_eps,
            r,
        }
    }

    pub fn validate(&self, data: &HealthDataset) -> Result<()> {
        if self.beta.len() != data.p() || self.z.len() != data.n() || self.omega.len() != data.n() {
            return Err(Error::Dimension(
                "chain state does not match the dataset".into(),
            ));
        }
        if self.omega.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("omega", "non-positive entry"));
        }
        match data.family() {
            Family::Gaussian => match self.sigma2_eps {
                Some(s) if s > 0.0 => {}
                other => return Err(Error::invalid("sigma2_eps", format!("{other:?}"))),
            },
            Family::NegBin => match self.r {
                Some(r) if (1..=DEFAULT_R_MAX).contains(&r) => {}
                other => return Err(Error::invalid("r", format!("{other:?}"))),
            },
            Family::Bernoulli => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "plug_in", alias = "plugin")]
    PlugIn,
    Mi,
    Mia,
    Du,
    Mvn,
    Ukde,
    Mkde,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::PlugIn,
        Method::Mi,
        Method::Mia,
        Method::Du,
        Method::Mvn,
        Method::Ukde,
        Method::Mkde,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::PlugIn => "Plug-in",
            Method::Mi => "MI",
            Method::Mia => "MIA",
            Method::Du => "DU",
            Method::Mvn => "MVN",
            Method::Ukde => "UKDE",
            Method::Mkde => "MKDE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default)]
    pub summary: RowSummary,
    /// DU only: Metropolis column proposals instead of the Gibbs categorical.
    #[serde(default)]
    pub du_metropolis: bool,
    /// UKDE only.
    #[serde(default)]
    pub ukde_bandwidth: BandwidthSelector,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            summary: RowSummary::Median,
            du_metropolis: false,
            ukde_bandwidth: BandwidthSelector::SheatherJones,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefPrior {
    /// Independent `N(0, sd²)` on every regression coefficient and `θ`.
    Normal {
        sd: f64,
    },
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub coef: CoefPrior,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub r_max: u32,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            coef: CoefPrior::Normal { sd: 100.0 },
            sigma2_shape: 0.01,
            sigma2_rate: 0.01,
            r_max: DEFAULT_R_MAX,
        }
    }
}

impl PriorSpec {
    pub fn flat() -> Self {
        Self {
            coef: CoefPrior::Flat,
            ..Self::default()
        }
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        if self.coef == CoefPrior::Flat && family != Family::Gaussian {
            return Err(Error::invalid(
                "coef_prior",
                "flat prior is only available for gaussian outcomes",
            ));
        }
        if let CoefPrior::Normal { sd } = self.coef {
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(Error::invalid("coef_prior.sd", sd));
            }
        }
        if !(self.sigma2_shape > 0.0) || !(self.sigma2_rate > 0.0) {
            return Err(Error::invalid(
                "sigma2_prior",
                format!("({}, {})", self.sigma2_shape, self.sigma2_rate),
            ));
        }
        if self.r_max < 1 {
            return Err(Error::invalid("r_max", self.r_max));
        }
        Ok(())
    }

    /// Prior precision of each coefficient (zero when flat).
    pub fn coef_precision(&self) -> f64 {
        match self.coef {
            CoefPrior::Normal { sd } => 1.0 / (sd * sd),
            CoefPrior::Flat => 0.0,
        }
    }
}

/// Diagonal of `Ω` and the working response `Ỹ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub omega: DVector<f64>,
    pub ytilde: DVector<f64>,
}

/// Draw (or, for Gaussian outcomes, set) the auxiliary precisions and the
/// matching working response.
pub fn augmentation_quantities<R: Rng + ?Sized>(
    state: &ChainState,
    data: &HealthDataset,
    rng: &mut R,
) -> Result<Augmentation> {
    let n = data.n();
    match data.family() {
        Family::Gaussian => {
            let s2 = state
                .sigma2_eps
                .ok_or_else(|| Error::invalid("sigma2_eps", "missing for gaussian family"))?;
            Ok(Augmentation {
                omega: DVector::from_element(n, 1.0 / s2),
                ytilde: data.y().clone(),
            })
        }
        Family::Bernoulli | Family::NegBin => {
            let psi = data.linear_predictor(&state.beta, &state.z, state.theta);
            let mut omega = DVector::zeros(n);
            let mut ytilde = DVector::zeros(n);
            let r = match data.family() {
                Family::NegBin => Some(
                    state
                        .r
                        .ok_or_else(|| Error::invalid("r", "missing for negbin family"))?,
                ),
                _ => None,
            };
            for i in 0..n {
                let y = data.y()[i];
                let (shape, kappa) = match r {
                    None => (1u32, y - 0.5),
                    Some(r) => (r + y as u32, 0.5 * (y - f64::from(r))),
                };
                let w =
                    sample_polya_gamma(PolyaGammaParams::new(shape, psi[i])?, rng).max(MIN_OMEGA);
                omega[i] = w;
                ytilde[i] = kappa / w;
            }
            Ok(Augmentation { omega, ytilde })
        }
    }
}

/// `Ỹ - O - Xβ`, the common input of every exposure update.
pub fn whitened_residual_target(
    state: &ChainState,
    data: &HealthDataset,
    ytilde: &DVector<f64>,
) -> DVector<f64> {
    let mut out = ytilde - data.offset();
    out -= data.x() * &state.beta;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    /// Subtract the mean of every entry, divide by their standard deviation.
    GlobalMeanSd,
    /// Subtract the median of every entry, divide by their interquartile range.
    MedianIqr,
}

/// `x ↦ (x - location) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub location: f64,
    pub scale: f64,
}

impl AffineTransform {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.location
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        v.map(|x| self.apply(x))
    }
}

/// Standardize every entry of the ensemble with statistics of the whole
/// matrix. The returned transform must be applied to anything compared on the
/// same scale (e.g. the true exposures in a simulation).
pub fn standardize_ensemble(
    ensemble: &ExposureEnsemble,
    mode: StandardizeMode,
) -> Result<(ExposureEnsemble, AffineTransform)> {
    let all = ensemble.draws().as_slice();
    let (location, scale) = match mode {
        StandardizeMode::GlobalMeanSd => (
            stats::mean(all),
            if all.len() > 1 { stats::sd(all) } else { 0.0 },
        ),
        StandardizeMode::MedianIqr => {
            let s = stats::sorted(all);
            (
                stats::quantile_sorted(&s, 0.5),
                stats::quantile_sorted(&s, 0.75) - stats::quantile_sorted(&s, 0.25),
            )
        }
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateEnsemble(format!(
            "{mode:?} scale is {scale}"
        )));
    }
    let t = AffineTransform { location, scale };
    Ok((ensemble.map(|x| t.apply(x))?, t))
}
