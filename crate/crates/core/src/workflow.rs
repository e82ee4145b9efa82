//! End-to-end commands behind the CLI: fit, simulate, evaluate, export, replicate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::config::{Algorithm, RunConfig};
use crate::data::{load_events, save_events};
use crate::error::{Error, Result};
use crate::files::{
    load_model, load_truth, save_model, save_truth, write, Metrics, ModelFile, ModelKind,
    TruthFile,
};
use crate::mixture::{fit_committee, fit_hard, fit_soft};
use crate::numeric::{derive_seed, mean_sd};
use crate::quadrature::{build_grid, export_density_grid, integrate, l1_distance, write_raster};
use crate::vmf::{generate_setting, SimSetting};

fn require_seed(cfg: &RunConfig) -> Result<u64> {
    cfg.seed
        .ok_or_else(|| Error::InvalidParameter("a seed is required".into()))
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Fits the configured model to an event file and writes the model (and
/// optionally the fit report) to disk.
pub fn cmd_fit(
    cfg: &RunConfig,
    data_path: &Path,
    model_out: &Path,
    report_out: Option<&Path>,
) -> Result<ModelFile> {
    cfg.validate()?;
    let seed = require_seed(cfg)?;
    let data = load_events(data_path)?;
    info!(
        "fitting {} model to {} events from {}",
        cfg.algorithm,
        data.len(),
        data_path.display()
    );
    let (flow, sgd, em) = (cfg.flow(), cfg.sgd(), cfg.em());
    let points = data.points();
    let source = data_path.display().to_string();
    let file = match cfg.algorithm {
        Algorithm::Soft | Algorithm::Hard => {
            let (model, report) = if cfg.algorithm == Algorithm::Soft {
                let (m, _, r) = fit_soft(points, cfg.groups, &flow, &sgd, &em)?;
                (m, r)
            } else {
                let (m, _, r) = fit_hard(points, cfg.groups, &flow, &sgd, &em)?;
                (m, r)
            };
            for (t, ll) in report.log_likelihood_trace.iter().enumerate() {
                info!("iteration {:>3}: loglik {ll}", t + 1);
            }
            let mut file = ModelFile::new(ModelKind::Mixture, &model, seed, source, cfg.clone());
            file.report = Some(report);
            file
        }
        Algorithm::Committee => {
            let (model, report) =
                fit_committee(points, cfg.committee_members, &flow, &sgd, &em)?;
            let mut file =
                ModelFile::new(ModelKind::Committee, &model, seed, source, cfg.clone());
            file.committee = Some(report);
            file
        }
    };
    save_model(&file, model_out)?;
    if let Some(path) = report_out {
        let text = match (&file.report, &file.committee) {
            (Some(r), _) => to_json(r),
            (None, Some(c)) => to_json(c),
            (None, None) => unreachable!("every fit produces a report"),
        };
        write(path, &text)?;
    }
    Ok(file)
}

/// Draws a synthetic dataset and writes it with its ground truth.
pub fn cmd_simulate(setting: &SimSetting, data_out: &Path, truth_out: &Path) -> Result<TruthFile> {
    let (data, mixture) = generate_setting(setting)?;
    save_events(&data, data_out)?;
    let truth = TruthFile::new(*setting, mixture);
    save_truth(&truth, truth_out)?;
    Ok(truth)
}

/// L¹ distance between a fitted model and the truth, plus the fitted model's
/// total mass on the same grid.
pub fn evaluate(model: &ModelFile, truth: &TruthFile, grid_nodes: usize) -> Result<Metrics> {
    let mixture = model.model()?;
    let grid = build_grid(grid_nodes);
    Ok(Metrics {
        l1: l1_distance(&mixture, &truth.mixture, &grid)?,
        normalization: integrate(&mixture, &grid)?,
        grid_nodes: grid.len(),
        seed: model.seed,
    })
}

pub fn cmd_evaluate(
    model_path: &Path,
    truth_path: &Path,
    grid_nodes: usize,
    metrics_out: Option<&Path>,
) -> Result<Metrics> {
    let metrics = evaluate(&load_model(model_path)?, &load_truth(truth_path)?, grid_nodes)?;
    if let Some(path) = metrics_out {
        write(path, &metrics.to_text())?;
    }
    Ok(metrics)
}

/// Writes the fitted density on a regular lon/lat raster.
pub fn cmd_export(model_path: &Path, lon_steps: usize, lat_steps: usize, out: &Path) -> Result<()> {
    let model = load_model(model_path)?.model()?;
    let cells = export_density_grid(&model, lon_steps, lat_steps)?;
    let file = std::fs::File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_raster(&cells, &mut w)
        .and_then(|_| std::io::Write::flush(&mut w))
        .map_err(|e| Error::io(out, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSummary {
    pub l1: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl ReplicateSummary {
    /// `mean (sd)` to two decimals.
    pub fn table_cell(&self) -> String {
        format!("{:.2} ({:.2})", self.mean, self.sd)
    }
}

/// Runs simulate → fit → evaluate for `replicates` seeds derived from
/// `root_seed`, keeping every intermediate file in `out_dir`.
pub fn cmd_replicate(
    cfg: &RunConfig,
    components: usize,
    lambda: f64,
    n: usize,
    replicates: usize,
    root_seed: u64,
    out_dir: &Path,
) -> Result<ReplicateSummary> {
    if replicates == 0 {
        return Err(Error::InvalidParameter("replicates must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = |name: String| -> PathBuf { out_dir.join(name) };
    let mut l1 = Vec::with_capacity(replicates);
    let mut lines = String::from("replicate,seed,l1,normalization\n");
    for r in 0..replicates {
        let sim_seed = derive_seed(root_seed, 2 * r as u64);
        let fit_seed = derive_seed(root_seed, 2 * r as u64 + 1);
        let setting = SimSetting {
            components,
            lambda,
            n,
            seed: sim_seed,
        };
        let (data, truth) = (path(format!("data_{r}.csv")), path(format!("truth_{r}.json")));
        let truth_file = cmd_simulate(&setting, &data, &truth)?;
        let fit_cfg = RunConfig {
            seed: Some(fit_seed),
            ..cfg.clone()
        };
        let model = cmd_fit(&fit_cfg, &data, &path(format!("model_{r}.json")), None)?;
        let metrics = evaluate(&model, &truth_file, cfg.grid_nodes)?;
        write(&path(format!("metrics_{r}.txt")), &metrics.to_text())?;
        info!("replicate {r}: L1 = {:.4}", metrics.l1);
        let _ = writeln!(
            lines,
            "{r},{sim_seed},{},{}",
            metrics.l1, metrics.normalization
        );
        l1.push(metrics.l1);
    }
    let (mean, sd) = mean_sd(&l1);
    let summary = ReplicateSummary { l1, mean, sd };
    let _ = writeln!(
        lines,
        "# J={components} lambda={lambda} algorithm={} L1 {}",
        cfg.algorithm,
        summary.table_cell()
    );
    write(&path("summary.csv".into()), &lines)?;
    Ok(summary)
}
