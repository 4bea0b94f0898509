//! Synthetic two-stage data and the replicate loop that scores every
//! propagation method against the truth.

use std::io::{self, Write};

use expoprop_core::mcmc::{
    run_gibbs, run_mi, run_monte_carlo_gaussian, IntervalSummary, MiConfig, SamplerConfig,
};
use expoprop_core::model::{
    standardize_ensemble, AffineTransform, ExposureEnsemble, Family, HealthDataset, Method,
    MethodSpec, PriorSpec, StandardizeMode,
};
use expoprop_core::rng::stream_id;
use expoprop_core::updaters::plugin_exposure;
use expoprop_core::{Error, RandomSource, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Replicates whose fit may fail before a scenario is abandoned, in percent.
const MAX_FAILURE_PERCENT: usize = 2;

pub fn gen_locations<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
        .collect()
}

/// Exponential decay `exp(-φ d)` with `φ = -2 ln 0.05`, i.e. correlation 0.05
/// at distance 0.5; the identity when `correlated` is false.
pub fn gen_covariance(locations: &[[f64; 2]], correlated: bool) -> DMatrix<f64> {
    let n = locations.len();
    if !correlated {
        return DMatrix::identity(n, n);
    }
    let phi = -2.0 * 0.05f64.ln();
    DMatrix::from_fn(n, n, |i, k| {
        if i == k {
            1.0
        } else {
            let (a, b) = (locations[i], locations[k]);
            (-phi * (a[0] - b[0]).hypot(a[1] - b[1])).exp()
        }
    })
}

/// One simulated first stage: standardized ensemble, the truth on the same
/// scale, and the standardizing transform.
#[derive(Debug, Clone)]
pub struct SimulatedExposure {
    pub ensemble: ExposureEnsemble,
    pub truth: DVector<f64>,
    pub transform: AffineTransform,
}

/// `δ ~ N(0, τ²)`, then `m + 1` columns from `MVN(δ, Σ)` passed through
/// `exp` when skewed; the last column is the truth. Standardization uses the
/// `m` ensemble columns only.
pub fn gen_exposure_ensemble<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<SimulatedExposure> {
    let (n, m) = (config.n, config.m);
    if sigma.nrows() != n {
        return Err(Error::Dimension(format!(
            "covariance is {}x{}, n = {n}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let tau = config.tau2.sqrt();
    let delta: DVector<f64> = DVector::from_fn(n, |_, _| {
        tau * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
    });
    let mut raw = DMatrix::from_fn(n, m + 1, |_, _| StandardNormal.sample(rng));
    if config.correlated {
        let l = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::Factorization {
                what: "exposure covariance",
                detail: format!("n = {n}"),
            })?
            .unpack();
        raw = l * raw;
    }
    for mut col in raw.column_iter_mut() {
        col += &delta;
        if config.skewed {
            col.apply(|v| *v = v.exp());
        }
    }
    let ensemble = ExposureEnsemble::new(raw.columns(0, m).into_owned())?;
    let (ensemble, transform) = standardize_ensemble(&ensemble, StandardizeMode::GlobalMeanSd)?;
    let truth = transform.apply_vector(&raw.column(m).into_owned());
    Ok(SimulatedExposure {
        ensemble,
        truth,
        transform,
    })
}

/// `Y_i = θ z_i + ε_i`, `ε_i ~ N(0, 1)`, no intercept.
pub fn gen_health_outcomes<R: Rng + ?Sized>(
    z: &DVector<f64>,
    theta: f64,
    rng: &mut R,
) -> DVector<f64> {
    z.map(|zi| {
        let e: f64 = StandardNormal.sample(rng);
        theta * zi + e
    })
}

/// Bernoulli outcomes with `logit P(Y_i = 1) = ψ_i`.
pub fn gen_bernoulli_outcomes<R: Rng + ?Sized>(psi: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    psi.map(|p| {
        let prob = 1.0 / (1.0 + (-p).exp());
        f64::from(u8::from(rng.random::<f64>() < prob))
    })
}

/// Negative-binomial counts with size `r` and `logit p_i = ψ_i`, so that
/// `E[Y_i] = r e^{ψ_i}`; drawn as a gamma mixture of Poissons.
pub fn gen_negbin_outcomes<R: Rng + ?Sized>(
    psi: &DVector<f64>,
    r: u32,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if r == 0 {
        return Err(Error::invalid("r", "0"));
    }
    psi.iter()
        .map(|&p| {
            let gamma = rand_distr::Gamma::new(f64::from(r), p.exp())
                .map_err(|e| Error::invalid("psi", e.to_string()))?;
            let rate = gamma.sample(rng);
            if rate <= 0.0 {
                return Ok(0.0);
            }
            let poisson =
                rand_distr::Poisson::new(rate).map_err(|e| Error::invalid("psi", e.to_string()))?;
            Ok(poisson.sample(rng))
        })
        .collect::<Result<Vec<f64>>>()
        .map(DVector::from_vec)
}

/// A method scored in a scenario: the seven propagation methods plus the
/// reference fit that uses the true exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    True,
    #[serde(untagged)]
    Method(Method),
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::True => "True",
            Arm::Method(m) => m.label(),
        }
    }

    // stable across method lists so adding an arm never reshuffles the others
    fn stream_tag(self) -> u64 {
        match self {
            Arm::True => 0,
            Arm::Method(m) => 1 + Method::ALL.iter().position(|&x| x == m).expect("listed") as u64,
        }
    }
}

fn default_methods() -> Vec<MethodSpec> {
    Method::ALL.iter().map(|&m| MethodSpec::new(m)).collect()
}

fn default_true() -> bool {
    true
}

fn default_sampler() -> SamplerConfig {
    SamplerConfig::simulation()
}

/// One cell of the factorial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub theta_true: f64,
    pub correlated: bool,
    pub skewed: bool,
    pub tau2: f64,
    pub n: usize,
    pub m: usize,
    pub replicates: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_true")]
    pub include_true: bool,
    pub seed: u64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
    /// Smaller budget for MKDE, whose sweeps are the most expensive.
    #[serde(default)]
    pub mkde_sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub mi: MiConfig,
}

impl ScenarioConfig {
    /// Desk-scale cell: n = 250, m = 500, R = 50, full MCMC budgets.
    pub fn desk(theta_true: f64, correlated: bool, skewed: bool, tau2: f64, seed: u64) -> Self {
        Self {
            theta_true,
            correlated,
            skewed,
            tau2,
            n: 250,
            m: 500,
            replicates: 50,
            methods: default_methods(),
            include_true: true,
            seed,
            sampler: SamplerConfig::simulation(),
            mkde_sampler: None,
            mi: MiConfig::default(),
        }
    }

    /// Full study scale: m = 1000 and R = 500.
    pub fn full_scale(
        theta_true: f64,
        correlated: bool,
        skewed: bool,
        tau2: f64,
        seed: u64,
    ) -> Self {
        Self {
            m: 1000,
            replicates: 500,
            ..Self::desk(theta_true, correlated, skewed, tau2, seed)
        }
    }

    /// All 16 combinations of θ, correlation, skewness and τ², in the
    /// order θ, τ², correlated, skewed.
    pub fn factorial(base: &ScenarioConfig) -> Vec<ScenarioConfig> {
        let mut out = Vec::with_capacity(16);
        for theta in [1.0, 0.0] {
            for tau2 in [0.1, 1.0] {
                for correlated in [false, true] {
                    for skewed in [false, true] {
                        out.push(ScenarioConfig {
                            theta_true: theta,
                            tau2,
                            correlated,
                            skewed,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 || self.m < 10 || self.replicates == 0 {
            return Err(Error::InvalidParameter {
                name: "scenario",
                value: format!(
                    "n = {}, m = {}, replicates = {}",
                    self.n, self.m, self.replicates
                ),
            });
        }
        if !(self.tau2 >= 0.0) || !self.tau2.is_finite() || !self.theta_true.is_finite() {
            return Err(Error::InvalidParameter {
                name: "scenario",
                value: format!("theta_true = {}, tau2 = {}", self.theta_true, self.tau2),
            });
        }
        self.sampler.validate()?;
        if let Some(s) = &self.mkde_sampler {
            s.validate()?;
        }
        self.mi.per_fit_mcmc.validate()
    }

    pub fn arms(&self) -> Vec<Arm> {
        let mut arms = Vec::new();
        if self.include_true {
            arms.push(Arm::True);
        }
        arms.extend(self.methods.iter().map(|s| Arm::Method(s.method)));
        arms
    }

    /// Identifies the cell; combined with the replicate index it names the
    /// replicate's random stream.
    pub fn scenario_key(&self) -> u64 {
        stream_id(&[
            self.theta_true.to_bits(),
            self.correlated as u64,
            self.skewed as u64,
            self.tau2.to_bits(),
            self.n as u64,
            self.m as u64,
        ])
    }

    pub fn replicate_rng(&self, replicate: usize) -> RandomSource {
        RandomSource::new(
            self.seed,
            stream_id(&[self.scenario_key(), replicate as u64]),
        )
    }
}

/// Posterior summary of `θ` for one arm of one replicate, or why it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub theta_hat: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub arms: Vec<ArmResult>,
}

fn fit_arm(
    config: &ScenarioConfig,
    arm: Arm,
    spec: Option<&MethodSpec>,
    data: &HealthDataset,
    sim: &SimulatedExposure,
    rng: &RandomSource,
) -> Result<IntervalSummary> {
    let mut fit_rng = rng.split(&[arm.stream_tag()]);
    let draws = config.sampler.retained_per_chain() * config.sampler.chains;
    let samples = match arm {
        Arm::True => {
            run_monte_carlo_gaussian(data, &sim.truth, &PriorSpec::flat(), draws, &mut fit_rng)?
        }
        Arm::Method(Method::PlugIn) => {
            let summary = spec.map(|s| s.summary).unwrap_or_default();
            let zhat = plugin_exposure(&sim.ensemble, summary);
            run_monte_carlo_gaussian(data, &zhat, &PriorSpec::flat(), draws, &mut fit_rng)?
        }
        Arm::Method(Method::Mi) => run_mi(
            data,
            &sim.ensemble,
            &PriorSpec::flat(),
            &config.mi,
            &fit_rng,
        )?,
        Arm::Method(method) => {
            let spec = spec.copied().unwrap_or_else(|| MethodSpec::new(method));
            let sampler = match (method, config.mkde_sampler) {
                (Method::Mkde, Some(s)) => s,
                _ => config.sampler,
            };
            run_gibbs(
                data,
                &sim.ensemble,
                &spec,
                &PriorSpec::default(),
                &sampler,
                &fit_rng,
            )?
        }
    };
    Ok(samples.theta_summary())
}

/// Generate one replicate and fit every arm on it.
pub fn run_replicate(config: &ScenarioConfig, replicate: usize) -> Result<ReplicateResult> {
    let rng = config.replicate_rng(replicate);
    let mut gen = rng.split(&[u64::MAX]);
    let locations = gen_locations(config.n, &mut gen);
    let sigma = gen_covariance(&locations, config.correlated);
    let sim = gen_exposure_ensemble(config, &sigma, &mut gen)?;
    let y = gen_health_outcomes(&sim.truth, config.theta_true, &mut gen);
    let data = HealthDataset::intercept_only(y, None, Family::Gaussian)?;
    let mut arms = Vec::new();
    if config.include_true {
        arms.push((Arm::True, None));
    }
    arms.extend(
        config
            .methods
            .iter()
            .map(|s| (Arm::Method(s.method), Some(s))),
    );
    let results = arms
        .into_iter()
        .map(
            |(arm, spec)| match fit_arm(config, arm, spec, &data, &sim, &rng) {
                Ok(s) => ArmResult {
                    arm,
                    theta_hat: Some(s.mean),
                    lower: Some(s.lower),
                    upper: Some(s.upper),
                    error: None,
                },
                Err(e) => ArmResult {
                    arm,
                    theta_hat: None,
                    lower: None,
                    upper: None,
                    error: Some(e.to_string()),
                },
            },
        )
        .collect();
    Ok(ReplicateResult {
        replicate,
        arms: results,
    })
}

/// A metric ×100 with its Monte Carlo standard error (also ×100).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub arm: Arm,
    pub label: String,
    pub replicates_ok: usize,
    pub failures: usize,
    pub bias: Estimate,
    pub mse: Estimate,
    pub coverage: Estimate,
    /// Power when `θ ≠ 0`, type-I error rate when `θ = 0`.
    pub rejection: Estimate,
    pub mean_theta_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: ScenarioConfig,
    pub arms: Vec<ArmMetrics>,
    pub replicates: Vec<ReplicateResult>,
}

fn proportion(hits: usize, total: usize) -> Estimate {
    let p = hits as f64 / total as f64;
    Estimate {
        value: 100.0 * p,
        se: 100.0 * (p * (1.0 - p) / total as f64).sqrt(),
    }
}

fn mean_with_se(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Estimate {
        value: 100.0 * mean,
        se: 100.0 * sd / n.sqrt(),
    }
}

impl MetricsReport {
    /// Score replicate results; fails when an arm exceeds the failure limit.
    pub fn from_replicates(
        config: &ScenarioConfig,
        mut replicates: Vec<ReplicateResult>,
    ) -> Result<Self> {
        replicates.sort_by_key(|r| r.replicate);
        let theta = config.theta_true;
        let mut arms = Vec::new();
        for arm in config.arms() {
            let results: Vec<&ArmResult> = replicates
                .iter()
                .filter_map(|r| r.arms.iter().find(|a| a.arm == arm))
                .collect();
            let ok: Vec<(f64, f64, f64)> = results
                .iter()
                .filter_map(|a| Some((a.theta_hat?, a.lower?, a.upper?)))
                .collect();
            let failures = results.len() - ok.len();
            if failures * 100 > MAX_FAILURE_PERCENT * results.len().max(1) || ok.is_empty() {
                return Err(Error::TooManyFailures {
                    failed: failures,
                    total: results.len(),
                });
            }
            let errors: Vec<f64> = ok.iter().map(|o| o.0 - theta).collect();
            let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
            let covered = ok.iter().filter(|o| o.1 <= theta && theta <= o.2).count();
            let rejected = ok.iter().filter(|o| o.1 > 0.0 || o.2 < 0.0).count();
            arms.push(ArmMetrics {
                arm,
                label: arm.label().to_owned(),
                replicates_ok: ok.len(),
                failures,
                bias: mean_with_se(&errors),
                mse: mean_with_se(&sq),
                coverage: proportion(covered, ok.len()),
                rejection: proportion(rejected, ok.len()),
                mean_theta_hat: ok.iter().map(|o| o.0).sum::<f64>() / ok.len() as f64,
            });
        }
        Ok(Self {
            scenario: config.clone(),
            arms,
            replicates,
        })
    }

    pub fn arm(&self, arm: Arm) -> Option<&ArmMetrics> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn method(&self, method: Method) -> Option<&ArmMetrics> {
        self.arm(Arm::Method(method))
    }

    /// Per-replicate `θ̂` of one arm, in replicate order.
    pub fn theta_hats(&self, arm: Arm) -> Vec<Option<f64>> {
        self.replicates
            .iter()
            .map(|r| {
                r.arms
                    .iter()
                    .find(|a| a.arm == arm)
                    .and_then(|a| a.theta_hat)
            })
            .collect()
    }
}

/// All replicates of one cell, in parallel; results do not depend on the
/// execution order.
pub fn run_scenario(config: &ScenarioConfig) -> Result<MetricsReport> {
    config.validate()?;
    let results: Vec<ReplicateResult> = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect::<Result<_>>()?;
    MetricsReport::from_replicates(config, results)
}

pub fn run_grid(configs: &[ScenarioConfig]) -> Result<Vec<MetricsReport>> {
    configs.iter().map(run_scenario).collect()
}

/// Four rows per scenario (Bias, MSE, EC, and Power or Type-I), one column
/// per arm, values ×100.
type Metric = (&'static str, fn(&ArmMetrics) -> f64);

pub fn write_table<W: Write>(mut w: W, reports: &[MetricsReport]) -> io::Result<()> {
    let Some(first) = reports.first() else {
        return Ok(());
    };
    let labels: Vec<&str> = first.arms.iter().map(|a| a.label.as_str()).collect();
    writeln!(
        w,
        "Metric,Theta,Tau2,Correlated,Skewed,{}",
        labels.join(",")
    )?;
    for rep in reports {
        let s = &rep.scenario;
        let yes_no = |b: bool| if b { "Yes" } else { "No" };
        let rejection = if s.theta_true == 0.0 {
            "Type-I"
        } else {
            "Power"
        };
        let metrics: [Metric; 4] = [
            ("Bias", |a| a.bias.value),
            ("MSE", |a| a.mse.value),
            ("EC", |a| a.coverage.value),
            ("", |a| a.rejection.value),
        ];
        for (name, get) in metrics {
            let name = if name.is_empty() { rejection } else { name };
            write!(
                w,
                "{name},{},{},{},{}",
                s.theta_true,
                s.tau2,
                yes_no(s.correlated),
                yes_no(s.skewed)
            )?;
            for label in &labels {
                match rep.arms.iter().find(|a| a.label == *label) {
                    Some(a) => write!(w, ",{:.2}", get(a))?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
