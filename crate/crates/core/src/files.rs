//! On-disk documents: fitted models, simulation truth, and metrics.
//!
//! Models and truth files are versioned JSON. Floats are written in
//! shortest round-trip form and parsed exactly, so save → load reproduces
//! every parameter bit for bit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::flow::ComponentParams;
use crate::mixture::{CommitteeReport, FitReport, MixtureModel};
use crate::vmf::{SimSetting, VmfMixture, VmfParams};

pub const MODEL_FORMAT: &str = "mixflow-model";
pub const MODEL_VERSION: u32 = 1;
pub const TRUTH_FORMAT: &str = "mixflow-truth";
pub const TRUTH_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mixture,
    Committee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub groups: usize,
    pub layers: usize,
    pub bases: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentParams>,
    pub seed: u64,
    pub source: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<FitReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committee: Option<CommitteeReport>,
}

impl ModelFile {
    pub fn new(
        kind: ModelKind,
        model: &MixtureModel,
        seed: u64,
        source: impl Into<String>,
        config: RunConfig,
    ) -> Self {
        let first = &model.components()[0];
        ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind,
            groups: model.g(),
            layers: first.k(),
            bases: first.layers()[0].p(),
            weights: model.weights().to_vec(),
            components: model.components().to_vec(),
            seed,
            source: source.into(),
            config,
            report: None,
            committee: None,
        }
    }

    /// The mixture described by the file, after consistency checks.
    pub fn model(&self) -> Result<MixtureModel> {
        let bad = |message: String| Error::Format {
            kind: "model",
            message,
        };
        if self.components.len() != self.groups {
            return Err(bad(format!(
                "groups = {} but {} components present",
                self.groups,
                self.components.len()
            )));
        }
        for (g, c) in self.components.iter().enumerate() {
            if c.k() != self.layers {
                return Err(bad(format!("component {g} has {} layers", c.k())));
            }
            if c.layers().iter().any(|l| l.p() != self.bases) {
                return Err(bad(format!("component {g} has a layer without {} bases", self.bases)));
            }
        }
        MixtureModel::new(self.components.clone(), self.weights.clone())
            .map_err(|e| bad(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<u32>,
}

fn parse_versioned<T: DeserializeOwned>(
    text: &str,
    kind: &'static str,
    format: &str,
    version: u32,
) -> Result<T> {
    let bad = |message: String| Error::Format { kind, message };
    let header: Header = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    match header.format.as_deref() {
        Some(f) if f == format => {}
        Some(f) => return Err(bad(format!("format is `{f}`, expected `{format}`"))),
        None => return Err(bad("missing `format` field".into())),
    }
    match header.version {
        Some(v) if v == version => {}
        Some(v) => {
            return Err(Error::Version {
                kind,
                found: v,
                expected: version,
            })
        }
        None => return Err(bad("missing `version` field".into())),
    }
    serde_json::from_str(text).map_err(|e| bad(e.to_string()))
}

pub fn parse_model(text: &str) -> Result<ModelFile> {
    let file: ModelFile = parse_versioned(text, "model", MODEL_FORMAT, MODEL_VERSION)?;
    file.model()?;
    Ok(file)
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    parse_model(&read(path)?)
}

pub fn save_model(file: &ModelFile, path: &Path) -> Result<()> {
    write(path, &file.to_json())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub format: String,
    pub version: u32,
    pub setting: SimSetting,
    pub mixture: VmfMixture,
}

impl TruthFile {
    pub fn new(setting: SimSetting, mixture: VmfMixture) -> Self {
        TruthFile {
            format: TRUTH_FORMAT.into(),
            version: TRUTH_VERSION,
            setting,
            mixture,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("truth serializes");
        s.push('\n');
        s
    }
}

pub fn parse_truth(text: &str) -> Result<TruthFile> {
    let file: TruthFile = parse_versioned(text, "truth", TRUTH_FORMAT, TRUTH_VERSION)?;
    let bad = |e: Error| Error::Format {
        kind: "truth",
        message: e.to_string(),
    };
    let comps = file
        .mixture
        .components()
        .iter()
        .map(|c| VmfParams::new(c.mean_direction, c.concentration))
        .collect::<Result<Vec<_>>>()
        .map_err(bad)?;
    VmfMixture::new(comps, file.mixture.weights().to_vec()).map_err(bad)?;
    Ok(file)
}

pub fn load_truth(path: &Path) -> Result<TruthFile> {
    parse_truth(&read(path)?)
}

pub fn save_truth(file: &TruthFile, path: &Path) -> Result<()> {
    write(path, &file.to_json())
}

/// Evaluation results, written as `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub l1: f64,
    pub normalization: f64,
    pub grid_nodes: usize,
    pub seed: u64,
}

impl Metrics {
    pub fn to_text(&self) -> String {
        format!(
            "l1 = {}\nnormalization = {}\ngrid_nodes = {}\nseed = {}\n",
            self.l1, self.normalization, self.grid_nodes, self.seed
        )
    }
}

pub fn parse_metrics(text: &str) -> Result<Metrics> {
    let bad = |message: String| Error::Format {
        kind: "metrics",
        message,
    };
    let (mut l1, mut normalization, mut grid_nodes, mut seed) = (None, None, None, None);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected `key = value`", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let invalid = || bad(format!("line {}: invalid value for `{key}`", i + 1));
        let slot_taken = match key {
            "l1" => l1.replace(value.parse::<f64>().map_err(|_| invalid())?).is_some(),
            "normalization" => normalization
                .replace(value.parse::<f64>().map_err(|_| invalid())?)
                .is_some(),
            "grid_nodes" => grid_nodes
                .replace(value.parse::<usize>().map_err(|_| invalid())?)
                .is_some(),
            "seed" => seed.replace(value.parse::<u64>().map_err(|_| invalid())?).is_some(),
            other => return Err(bad(format!("line {}: unknown key `{other}`", i + 1))),
        };
        if slot_taken {
            return Err(bad(format!("line {}: duplicate key `{key}`", i + 1)));
        }
    }
    let missing = |k: &str| bad(format!("missing `{k}`"));
    Ok(Metrics {
        l1: l1.ok_or_else(|| missing("l1"))?,
        normalization: normalization.ok_or_else(|| missing("normalization"))?,
        grid_nodes: grid_nodes.ok_or_else(|| missing("grid_nodes"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    })
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
