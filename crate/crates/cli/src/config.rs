//! TOML run configurations. Every table rejects unknown keys, and every
//! file carries `schema_version = 1`.

use std::path::{Path, PathBuf};

use expoprop_core::mcmc::{MiConfig, SamplerConfig};
use expoprop_core::model::{CoefPrior, Family, Method, MethodSpec, PriorSpec, StandardizeMode};
use expoprop_sim::firststage::SyntheticSpec;
use expoprop_sim::ScenarioConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Parse a config file, check its schema version, and resolve relative
/// paths against the file's directory.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut cfg: T =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    if cfg.schema_version() != SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            cfg.schema_version()
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
    fn resolve_paths(&mut self, base: &Path);
}

/// SHA-256 of the canonical JSON form of a parsed config. Formatting and
/// comments do not change it; any semantic field does.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(&json))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Simulation,
    Application,
}

/// A named budget, optionally with some fields overridden, or a fully
/// explicit one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub preset: Option<Preset>,
    pub iterations_total: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
}

impl SamplerSection {
    pub fn resolve(&self) -> CliResult<SamplerConfig> {
        let base = match self.preset {
            Some(Preset::Simulation) => Some(SamplerConfig::simulation()),
            Some(Preset::Application) => Some(SamplerConfig::application()),
            None => None,
        };
        let pick = |v: Option<usize>, from: Option<usize>, name: &str| {
            v.or(from).ok_or_else(|| {
                CliError::config(format!(
                    "sampler.{name} is required when no preset is given"
                ))
            })
        };
        let cfg = SamplerConfig {
            iterations_total: pick(
                self.iterations_total,
                base.map(|b| b.iterations_total),
                "iterations_total",
            )?,
            burn_in: pick(self.burn_in, base.map(|b| b.burn_in), "burn_in")?,
            thin: pick(self.thin, base.map(|b| b.thin), "thin")?,
            chains: self.chains.unwrap_or(1),
        };
        cfg.validate()
            .map_err(|e| CliError::config(format!("sampler: {e}")))?;
        Ok(cfg)
    }
}

/// Prior overrides on top of the defaults (normal sd 100, IG(0.01, 0.01),
/// r on 1..100).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub coef: Option<CoefPrior>,
    pub sigma2_shape: Option<f64>,
    pub sigma2_rate: Option<f64>,
    pub r_max: Option<u32>,
}

impl PriorSection {
    pub fn resolve(&self) -> PriorSpec {
        let d = PriorSpec::default();
        PriorSpec {
            coef: self.coef.unwrap_or(d.coef),
            sigma2_shape: self.sigma2_shape.unwrap_or(d.sigma2_shape),
            sigma2_rate: self.sigma2_rate.unwrap_or(d.sigma2_rate),
            r_max: self.r_max.unwrap_or(d.r_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Delimited table with a header row.
    pub table: PathBuf,
    pub outcome: String,
    /// Covariate columns; an intercept is always added.
    #[serde(default)]
    pub covariates: Vec<String>,
    pub offset: Option<String>,
    pub family: Family,
    /// `n × m` matrix of exposure draws, rows aligned with the table.
    pub ensemble: PathBuf,
    pub standardize: Option<StandardizeMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GewekeSection {
    pub first: f64,
    pub last: f64,
}

impl Default for GewekeSection {
    fn default() -> Self {
        Self {
            first: 0.1,
            last: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub data: DataSection,
    pub method: MethodSpec,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub mi: Option<MiConfig>,
    #[serde(default)]
    pub geweke: GewekeSection,
}

impl Versioned for FitConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data.table);
        resolve(base, &mut self.data.ensemble);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// n = 250, m = 500, R = 50.
    Desk,
    /// m = 1000, R = 500.
    Full,
}

/// Overrides applied to the base cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSection {
    pub theta_true: Option<f64>,
    pub correlated: Option<bool>,
    pub skewed: Option<bool>,
    pub tau2: Option<f64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub replicates: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub include_true: Option<bool>,
    pub sampler: Option<SamplerSection>,
    pub mkde_sampler: Option<SamplerSection>,
    pub mi: Option<MiConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub scale: Scale,
    /// Expand the base cell over all 16 factor combinations.
    #[serde(default)]
    pub factorial: bool,
    #[serde(default)]
    pub base: CellSection,
}

impl Versioned for SimulateConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn resolve_paths(&mut self, _base: &Path) {}
}

impl SimulateConfig {
    pub fn scenarios(&self) -> CliResult<Vec<ScenarioConfig>> {
        let b = &self.base;
        let (theta, corr, skew, tau2) = (
            b.theta_true.unwrap_or(1.0),
            b.correlated.unwrap_or(false),
            b.skewed.unwrap_or(false),
            b.tau2.unwrap_or(0.1),
        );
        let mut cell = match self.scale {
            Scale::Desk => ScenarioConfig::desk(theta, corr, skew, tau2, self.seed),
            Scale::Full => ScenarioConfig::full_scale(theta, corr, skew, tau2, self.seed),
        };
        if let Some(v) = b.n {
            cell.n = v;
        }
        if let Some(v) = b.m {
            cell.m = v;
        }
        if let Some(v) = b.replicates {
            cell.replicates = v;
        }
        if let Some(ms) = &b.methods {
            cell.methods = ms.iter().map(|&m| MethodSpec::new(m)).collect();
        }
        if let Some(v) = b.include_true {
            cell.include_true = v;
        }
        if let Some(s) = &b.sampler {
            cell.sampler = s.resolve()?;
        }
        if let Some(s) = &b.mkde_sampler {
            cell.mkde_sampler = Some(s.resolve()?);
        }
        if let Some(mi) = b.mi {
            cell.mi = mi;
        }
        let cells = if self.factorial {
            ScenarioConfig::factorial(&cell)
        } else {
            vec![cell]
        };
        for c in &cells {
            c.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DownscaleConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Posterior (and hence ensemble) draws.
    pub draws: usize,
    /// Monitor table: location, lat, lon, day, value, predictor.
    pub observations: Option<PathBuf>,
    /// Prediction table: location, lat, lon, day, predictor.
    pub grid: Option<PathBuf>,
    /// Generate both tables instead of reading them.
    pub synthetic: Option<SyntheticSpec>,
    pub standardize: Option<StandardizeMode>,
}

impl Versioned for DownscaleConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.observations, &mut self.grid]
            .into_iter()
            .flatten()
        {
            resolve(base, p);
        }
    }
}

impl DownscaleConfig {
    pub fn validate(&self) -> CliResult<()> {
        if self.draws == 0 {
            return Err(CliError::config("draws must be positive"));
        }
        match (&self.observations, &self.grid, &self.synthetic) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => Ok(()),
            _ => Err(CliError::config(
                "give either both `observations` and `grid`, or a `[synthetic]` table",
            )),
        }
    }
}
