use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use musel_core::error::HarnessError;
use musel_core::harness::{
    analyze, parse_override, run_experiment, AnalyzeOptions, ExperimentConfig, TestGrid,
};

#[derive(Parser)]
#[command(
    name = "musel",
    version,
    about = "Active-learning experiments on the push task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) pair of an experiment config.
    Run {
        /// JSON experiment config; missing keys take their defaults.
        config: PathBuf,
        /// Overrides as --key=value, dotted keys for nested fields.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Rebuild CSV/SVG artifacts from the run logs in an output directory.
    Analyze {
        dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Boundary band width as a fraction of the half-extent.
        #[arg(long)]
        band_fraction: Option<f64>,
        /// Boundary-count checkpoints, comma separated.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<usize>>,
        /// LP grid regions to trace, comma separated.
        #[arg(long, value_delimiter = ',')]
        lp_regions: Vec<usize>,
        #[arg(long)]
        no_svg: bool,
    },
    /// Precompute the test-grid ground truth for a config.
    Gridgen {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::Config(e.into()),
            other => Failure::Run(other.into()),
        }
    }
}

fn load_config(path: &PathBuf, raw: &[String]) -> Result<ExperimentConfig, Failure> {
    let overrides = raw
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    Ok(ExperimentConfig::from_json_str(&text, &overrides)?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let report = run_experiment(&cfg)?;
            for row in report.aggregate.iter().filter(|r| r.iter == cfg.n_iter) {
                println!(
                    "{:<14} iter {:>5}  rmse {:.5} +/- {:.5}  ({} runs)",
                    row.strategy, row.iter, row.mean_rmse, row.sem, row.n_runs
                );
            }
            println!("output: {}", report.output_dir.display());
            let failed: Vec<String> = report
                .failures()
                .map(|l| format!("{} seed {}", l.strategy, l.seed))
                .collect();
            if !failed.is_empty() {
                return Err(Failure::Run(anyhow!("failed runs: {}", failed.join(", "))));
            }
        }
        Command::Analyze {
            dir,
            bins,
            band_fraction,
            checkpoints,
            lp_regions,
            no_svg,
        } => {
            if bins == 0 {
                return Err(Failure::Config(anyhow!("--bins must be positive")));
            }
            let opts = AnalyzeOptions {
                bins,
                band_fraction,
                checkpoints,
                lp_regions,
                svg: !no_svg,
            };
            for p in analyze(&dir, &opts)? {
                println!("{}", p.display());
            }
        }
        Command::Gridgen { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let world = cfg.world_config();
            let cache = cfg.output_dir.join("cache");
            let grid = TestGrid::load_or_build(&cache, &world, cfg.resolution())?;
            let path = TestGrid::cache_path(&cache, &world, cfg.resolution());
            println!("{} points -> {}", grid.len(), path.display());
            println!("checksum {}", grid.checksum);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
