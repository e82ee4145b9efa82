//! Run configuration: a flat TOML table of fitting options.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{SgdConfig, DEFAULT_BETA_CAP};
use crate::mixture::{EmConfig, FlowConfig};
use crate::quadrature::DEFAULT_GRID_NODES;

pub const DEFAULT_GROUPS_REAL: usize = 20;
pub const DEFAULT_GROUPS_SIMULATED: usize = 10;
pub const DEFAULT_COMMITTEE_MEMBERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Soft,
    Hard,
    Committee,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Algorithm::Soft),
            "hard" => Ok(Algorithm::Hard),
            "committee" => Ok(Algorithm::Committee),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm `{other}` (expected soft, hard or committee)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Soft => "soft",
            Algorithm::Hard => "hard",
            Algorithm::Committee => "committee",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub groups: usize,
    pub layers: usize,
    pub bases: usize,
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_mstep: usize,
    pub momentum: f64,
    pub backtracking: bool,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: Option<u64>,
    pub grid_nodes: usize,
    pub beta_cap: f64,
    pub init_beta: f64,
    pub init_spread: f64,
    pub committee_members: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let flow = FlowConfig::default();
        let sgd = SgdConfig::default();
        let em = EmConfig::default();
        RunConfig {
            groups: DEFAULT_GROUPS_REAL,
            layers: flow.layers,
            bases: flow.bases,
            algorithm: Algorithm::Hard,
            learning_rate: sgd.learning_rate,
            batch_size: sgd.batch_size,
            epochs_per_mstep: sgd.epochs_per_mstep,
            momentum: sgd.momentum,
            backtracking: sgd.backtracking,
            tol: em.tol,
            max_iters: em.max_iters,
            seed: None,
            grid_nodes: DEFAULT_GRID_NODES,
            beta_cap: DEFAULT_BETA_CAP,
            init_beta: flow.init_beta,
            init_spread: flow.init_spread,
            committee_members: DEFAULT_COMMITTEE_MEMBERS,
        }
    }
}

impl RunConfig {
    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            layers: self.layers,
            bases: self.bases,
            beta_cap: self.beta_cap,
            init_beta: self.init_beta,
            init_spread: self.init_spread,
        }
    }

    /// SGD settings; the seed is the run seed (0 when unset).
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs_per_mstep: self.epochs_per_mstep,
            seed: self.seed.unwrap_or(0),
            momentum: self.momentum,
            backtracking: self.backtracking,
        }
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            tol: self.tol,
            max_iters: self.max_iters,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 {
            return Err(Error::InvalidParameter("groups must be >= 1".into()));
        }
        if self.committee_members == 0 {
            return Err(Error::InvalidParameter(
                "committee_members must be >= 1".into(),
            ));
        }
        if self.grid_nodes == 0 {
            return Err(Error::InvalidParameter("grid_nodes must be >= 1".into()));
        }
        self.flow().validate()?;
        self.sgd().validate()?;
        self.em().validate()
    }

    /// TOML form; fails only for seeds beyond the TOML integer range.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format {
            kind: "config",
            message: e.to_string(),
        })
    }
}

/// Parses and validates a configuration; absent keys take their defaults.
pub fn parse_config(text: &str, label: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
        Error::Parse {
            path: label.to_string(),
            line,
            message: e.message().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}
