use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mixflow::config::{load_config, Algorithm, RunConfig, DEFAULT_GROUPS_SIMULATED};
use mixflow::vmf::{SimSetting, DEFAULT_SAMPLE_SIZE};
use mixflow::workflow;

#[derive(Parser)]
#[command(name = "mixflow", version, about = "Mixtures of normalizing flows on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mixture (or committee) to a lon,lat event file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Optional fit report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Draw a synthetic dataset from a random vMF mixture.
    Simulate {
        /// Number of vMF components (J).
        #[arg(long)]
        components: usize,
        /// Rate of the exponential distribution of concentrations.
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data_out: PathBuf,
        #[arg(long)]
        truth_out: PathBuf,
    },
    /// L1 distance between a fitted model and a simulation truth file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = mixflow::quadrature::DEFAULT_GRID_NODES)]
        grid_nodes: usize,
        /// Metrics file; printed to stdout as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the fitted density on a lon/lat raster.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 720)]
        lon_steps: usize,
        #[arg(long, default_value_t = 360)]
        lat_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat simulate, fit and evaluate over several seeds; report mean (SD) of L1.
    Replicate {
        #[arg(long)]
        components: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Run options; a config file supplies the base, flags override it.
#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs_per_mstep: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    backtracking: Option<bool>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grid_nodes: Option<usize>,
    #[arg(long)]
    beta_cap: Option<f64>,
    #[arg(long)]
    init_beta: Option<f64>,
    #[arg(long)]
    init_spread: Option<f64>,
    #[arg(long)]
    committee_members: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, default_groups: usize) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => RunConfig {
                groups: default_groups,
                ..RunConfig::default()
            },
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            groups,
            layers,
            bases,
            algorithm,
            learning_rate,
            batch_size,
            epochs_per_mstep,
            momentum,
            backtracking,
            tol,
            max_iters,
            grid_nodes,
            beta_cap,
            init_beta,
            init_spread,
            committee_members
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_metrics(path: Option<&Path>, metrics: &mixflow::files::Metrics) {
    print!("{}", metrics.to_text());
    if let Some(p) = path {
        log::info!("metrics written to {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            data,
            out,
            report,
            seed,
            config,
        } => {
            let cfg = RunConfig {
                seed: Some(seed),
                ..config.resolve(mixflow::config::DEFAULT_GROUPS_REAL)?
            };
            let file = workflow::cmd_fit(&cfg, &data, &out, report.as_deref())
                .with_context(|| format!("fitting {}", data.display()))?;
            if let Some(r) = &file.report {
                println!(
                    "nonempty_components = {}\niterations = {}\nconverged = {}\nlog_likelihood = {}",
                    r.nonempty_components, r.iterations, r.converged, r.final_log_likelihood
                );
            }
            if let Some(c) = &file.committee {
                println!("members_fitted = {}", c.fitted);
            }
        }
        Command::Simulate {
            components,
            lambda,
            n,
            seed,
            data_out,
            truth_out,
        } => {
            let setting = SimSetting {
                components,
                lambda,
                n,
                seed,
            };
            workflow::cmd_simulate(&setting, &data_out, &truth_out)?;
        }
        Command::Evaluate {
            model,
            truth,
            grid_nodes,
            out,
        } => {
            let metrics = workflow::cmd_evaluate(&model, &truth, grid_nodes, out.as_deref())?;
            print_metrics(out.as_deref(), &metrics);
        }
        Command::Export {
            model,
            lon_steps,
            lat_steps,
            out,
        } => workflow::cmd_export(&model, lon_steps, lat_steps, &out)?,
        Command::Replicate {
            components,
            lambda,
            n,
            replicates,
            seed,
            out_dir,
            config,
        } => {
            let cfg = config.resolve(DEFAULT_GROUPS_SIMULATED)?;
            let summary = workflow::cmd_replicate(
                &cfg, components, lambda, n, replicates, seed, &out_dir,
            )?;
            println!("L1 {}", summary.table_cell());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
