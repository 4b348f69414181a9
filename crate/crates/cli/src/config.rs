//! Experiment configuration: a JSON file, command-line overrides, and the
//! fully resolved form that is echoed into every report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfm_core::audit::Property;
use tfm_core::ssp_k::threshold_constants;
use tfm_core::{BidVector, CMode, DistributionSpec, MechanismParams, ValuationDistribution};

/// What the run does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Rounds of the perturbed mechanism with truthful bidders.
    Simulate,
    /// One property audit of the configured mechanism.
    Audit,
    /// Largest feasible perturbation scale.
    Hsearch,
    /// Path dependence of the first-price increment field.
    Counterexample,
    /// Allocation, payments and revenue at one bid vector.
    Allocation,
    /// Expected miner revenue over a list of parameter rows.
    RevenueStudy,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Audit => "audit",
            Command::Hsearch => "hsearch",
            Command::Counterexample => "counterexample",
            Command::Allocation => "allocation",
            Command::RevenueStudy => "revenue-study",
        }
    }
}

/// Mechanism under audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismChoice {
    /// Soft second price with the variation term of `params`.
    #[default]
    SoftSecondPrice,
    /// The same, with the miner keeping every payment.
    NoBurn,
    /// Pay your bid, highest bid wins.
    FirstPrice,
    /// First price with bids shaded by `(n - 1) / n`.
    ShadedFirstPrice,
    /// `k` of the `n` users confirmed uniformly at random, nothing paid.
    RandomFreeAllocation,
}

/// Mechanism parameters as written in a config file. Missing fields take
/// defaults: `n = 5`, `k = 1`, `h = 0`, `m = 1` for one slot and
/// `m_#(n / k)` otherwise, `c` from `c_mode`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

/// One row of a revenue study or of an h-search sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRow {
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub h: f64,
    /// Defaults to `params.m` when that is given, else as for `params`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

/// A config file. Every field is optional on disk; the resolved echo in a
/// report has all of them filled in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default)]
    pub params: ParamsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<DistributionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_mode: Option<CMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<MechanismChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bids: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<Vec<StudyRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

/// A configuration problem, reported with exit status 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

impl ExperimentConfig {
    /// Parses a config, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                config_error(format!("config: {inner}"))
            } else {
                config_error(format!("config field `{path}`: {inner}"))
            }
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub const DEFAULT_N: usize = 5;
pub const DEFAULT_SEARCH_BUDGET: usize = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 500;

/// Default sample count for a command (and audited property).
pub fn default_samples(command: Command, property: Option<Property>) -> usize {
    match (command, property) {
        (Command::Simulate, _) => 10_000,
        (Command::Audit, Some(Property::UBnic)) => 50_000,
        (Command::Audit, _) => 100_000,
        (Command::Allocation, _) => 1_000_000,
        _ => 100_000,
    }
}

/// A config with every default applied and every constraint checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: Command,
    pub params: MechanismParams,
    pub dist: ValuationDistribution,
    pub c_mode: CMode,
    pub mechanism: MechanismChoice,
    pub samples: usize,
    pub seed: Option<u64>,
    pub property: Option<Property>,
    pub bids: Option<BidVector>,
    pub study: Vec<MechanismParams>,
    pub tolerance: f64,
    pub search_budget: usize,
    pub trials: usize,
}

impl Resolved {
    /// Applies defaults. `command` comes from the command line when the
    /// config does not name one; a mismatch is an error.
    pub fn new(cfg: &ExperimentConfig, command: Command) -> Result<Self, ConfigError> {
        if let Some(c) = cfg.command {
            if c != command {
                return Err(config_error(format!(
                    "config field `command`: file says `{}` but `{}` was requested",
                    c.as_str(),
                    command.as_str()
                )));
            }
        }
        let spec = cfg.dist.clone().unwrap_or_else(DistributionSpec::uniform);
        let dist = ValuationDistribution::new(spec)
            .map_err(|e| config_error(format!("config field `dist`: {e}")))?;
        let c_mode = cfg.c_mode.unwrap_or_default();

        let bids = match &cfg.bids {
            Some(b) => Some(
                BidVector::new(b.clone())
                    .map_err(|e| config_error(format!("config field `bids`: {e}")))?,
            ),
            None => None,
        };
        let n = match (cfg.params.n, &bids) {
            (Some(n), Some(b)) if command == Command::Allocation && n != b.len() => {
                return Err(config_error(format!(
                    "config field `params.n`: n = {n} but `bids` has {} entries",
                    b.len()
                )))
            }
            (Some(n), _) => n,
            (None, Some(b)) if command == Command::Allocation => b.len(),
            (None, _) => DEFAULT_N,
        };
        let k = cfg.params.k.unwrap_or(1);
        let m = match cfg.params.m {
            Some(m) => m,
            None => default_m(n, k)?,
        };
        let c = match cfg.params.c {
            Some(c) => c,
            None => c_mode
                .resolve(&dist)
                .map_err(|e| config_error(format!("config field `c_mode`: {e}")))?,
        };
        let h = cfg.params.h.unwrap_or(0.0);
        let params = MechanismParams::new(n, k, m, h, c)
            .map_err(|e| config_error(format!("config field `params`: {e}")))?;

        let property = match &cfg.property {
            Some(p) => Some(
                p.parse::<Property>()
                    .map_err(|e| config_error(format!("config field `property`: {e}")))?,
            ),
            None if command == Command::Audit => {
                return Err(config_error(
                    "config field `property`: required by the audit command",
                ))
            }
            None => None,
        };
        if command == Command::Allocation && bids.is_none() {
            return Err(config_error(
                "config field `bids`: required by the allocation command",
            ));
        }

        let study = match &cfg.study {
            None => vec![params],
            Some(rows) => rows
                .iter()
                .enumerate()
                .map(|(idx, row)| {
                    let at = |e: String| config_error(format!("config field `study[{idx}]`: {e}"));
                    let m = match row.m.or(cfg.params.m) {
                        Some(m) => m,
                        None => default_m(row.n, row.k).map_err(|e| at(e.0))?,
                    };
                    MechanismParams::new(row.n, row.k, m, row.h, c).map_err(|e| at(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };

        let samples = cfg
            .samples
            .unwrap_or_else(|| default_samples(command, property));
        if samples == 0 {
            return Err(config_error("config field `samples`: must be positive"));
        }
        let trials = cfg.trials.unwrap_or(DEFAULT_TRIALS);
        if trials == 0 {
            return Err(config_error("config field `trials`: must be positive"));
        }
        let tolerance = cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE);
        if !(tolerance > 0.0 && tolerance.is_finite()) {
            return Err(config_error(
                "config field `tolerance`: must be finite and > 0",
            ));
        }
        let search_budget = cfg.search_budget.unwrap_or(DEFAULT_SEARCH_BUDGET);

        let resolved = Self {
            command,
            params,
            dist,
            c_mode,
            mechanism: cfg.mechanism.unwrap_or_default(),
            samples,
            seed: cfg.seed,
            property,
            bids,
            study,
            tolerance,
            search_budget,
            trials,
        };
        if resolved.is_stochastic() && resolved.seed.is_none() {
            return Err(config_error(format!(
                "config field `seed`: required by the {} command",
                command.as_str()
            )));
        }
        Ok(resolved)
    }

    /// Whether the command draws random numbers.
    pub fn is_stochastic(&self) -> bool {
        match self.command {
            Command::Counterexample => false,
            Command::Allocation => {
                let p = &self.params;
                p.k > 1
                    && tfm_core::ssp_k::prefix_count(p.n, p.k) > tfm_core::ssp_k::ENUMERATION_LIMIT
            }
            _ => true,
        }
    }

    /// The config with every default written out. Running it again gives
    /// the same numbers. The output directory is left out: it says where a
    /// report goes, not what it contains.
    pub fn echo(&self) -> ExperimentConfig {
        let p = &self.params;
        ExperimentConfig {
            command: Some(self.command),
            params: ParamsConfig {
                n: Some(p.n),
                k: Some(p.k),
                m: Some(p.m),
                h: Some(p.h),
                c: Some(p.c),
            },
            dist: Some(self.dist.spec().clone()),
            c_mode: Some(self.c_mode),
            mechanism: Some(self.mechanism),
            samples: Some(self.samples),
            seed: self.seed,
            output_dir: None,
            property: self.property.map(|p| p.as_str().to_string()),
            bids: self.bids.as_ref().map(|b| b.as_slice().to_vec()),
            study: Some(
                self.study
                    .iter()
                    .map(|p| StudyRow {
                        n: p.n,
                        k: p.k,
                        h: p.h,
                        m: Some(p.m),
                    })
                    .collect(),
            ),
            tolerance: Some(self.tolerance),
            search_budget: Some(self.search_budget),
            trials: Some(self.trials),
        }
    }
}

/// `m = 1` for one slot, `m_#(n / k)` for larger blocks.
fn default_m(n: usize, k: usize) -> Result<f64, ConfigError> {
    if k <= 1 {
        return Ok(1.0);
    }
    let lambda = n as f64 / k as f64;
    threshold_constants(lambda).map(|t| t.m_sharp).map_err(|e| {
        config_error(format!(
            "config field `params.m`: no default for n / k = {lambda}: {e}; set m explicitly"
        ))
    })
}
