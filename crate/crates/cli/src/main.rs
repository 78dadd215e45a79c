use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use esam::diagnostics::{LandscapeMode, LandscapeOptions};
use esam_cli::{
    run_diagnose, run_landscape, run_throughput, run_timing_experiment, run_train, DiagnoseOptions,
    ExperimentConfig, TimingOptions,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "esam", version, about = "SGD, SAM and ESAM experiments on small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gaussian,
    Adversarial,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write steps.csv, summary.json and params.json.
    Train(Common),
    /// Median B2 time of ESAM steps for several selection ratios.
    Throughput {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1.0, 0.75, 0.5, 0.25])]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
    },
    /// Loss grid around a checkpoint written by `train`.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "gaussian")]
        mode: Mode,
        #[arg(long, default_value_t = 25)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        extent: f64,
        #[arg(long, default_value_t = 10)]
        groups: usize,
    },
    /// Saved backward time of layer masking; the config is a timing options file.
    Timing(Common),
    /// Split statistics of an ESAM run and the linearity table.
    Diagnose(Common),
}

fn experiment(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.out.is_some() {
        cfg.out.clone_from(&common.out);
    }
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, file: &str) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(file), &text).with_context(|| format!("writing {file}"))?;
    }
    print!("{text}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train(common) => {
            let cfg = experiment(&common)?;
            let run = run_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&run.summary)?);
        }
        Command::Throughput {
            common,
            gammas,
            repeats,
        } => {
            let cfg = experiment(&common)?;
            let report = run_throughput(&cfg, &gammas, repeats)?;
            emit(&report, cfg.out.as_deref(), "throughput.json")?;
        }
        Command::Landscape {
            common,
            checkpoint,
            mode,
            grid,
            extent,
            groups,
        } => {
            let cfg = experiment(&common)?;
            let opts = LandscapeOptions {
                mode: match mode {
                    Mode::Gaussian => LandscapeMode::Gaussian,
                    Mode::Adversarial => LandscapeMode::Adversarial,
                },
                grid_size: grid,
                extent,
                groups,
                seed: cfg.seed,
                eta: cfg.optim.eta,
                batch_size: cfg.batch_size,
            };
            let grid = run_landscape(&cfg, &checkpoint, &opts, cfg.out.as_deref())?;
            println!(
                "center {} max {} ({}x{}, {} groups)",
                grid.center_loss,
                grid.max_loss(),
                grid.axis.len(),
                grid.axis.len(),
                grid.groups
            );
        }
        Command::Timing(common) => {
            let mut opts: TimingOptions = match &common.config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                    .context("parsing timing options")?,
                None => TimingOptions::default(),
            };
            if let Some(seed) = common.seed {
                opts.seed = seed;
            }
            let model = run_timing_experiment(&opts)?;
            emit(&model, common.out.as_deref(), "timing.json")?;
        }
        Command::Diagnose(common) => {
            let cfg = experiment(&common)?;
            let mut inner = cfg.clone();
            inner.out = cfg.out.as_ref().map(|d| d.join("run"));
            let report = run_diagnose(&inner, &DiagnoseOptions::default())?;
            emit(&report, cfg.out.as_deref(), "diagnose.json")?;
        }
    }
    Ok(())
}
