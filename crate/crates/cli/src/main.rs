use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use csi_transnet::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "csi-transnet", version, about = "Compressive CSI feedback experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Experiment configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic datasets.
    GenData(Shared),
    /// Train the anchor decoders and every from-scratch baseline.
    TrainAnchor(Shared),
    /// Search the alignment shift of each new scenario.
    SearchShift(Shared),
    /// Augment the new-scenario training sets.
    Augment(Shared),
    /// Train the plug-in translation nets.
    TrainTrans(Shared),
    /// Evaluate every method and write results.csv.
    Eval(Shared),
    /// Plots and a summary table from a results CSV.
    Report {
        #[command(flatten)]
        shared: Shared,
        /// Results CSV; defaults to `<out>/results.csv`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Every stage in order.
    Run(Shared),
    /// Print the effective configuration as JSON.
    ShowConfig(Shared),
}

fn load_config(shared: &Shared) -> Result<ExperimentConfig> {
    let mut cfg = match &shared.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = shared.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &shared.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn report(cfg: &ExperimentConfig, results: Option<&Path>) -> Result<()> {
    let csv = results.map_or_else(|| cfg.out_dir.join("results.csv"), Path::to_path_buf);
    let dir = csv.parent().map_or_else(|| PathBuf::from("report"), |p| p.join("report"));
    let out = harness::report(&csv, &dir).with_context(|| format!("report on {}", csv.display()))?;
    println!("{} rows, summary in {}", out.rows, out.summary.display());
    for p in &out.plots {
        println!("plot {}", p.display());
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(s) => harness::generate_data(&load_config(&s)?, &mut log)?,
        Command::TrainAnchor(s) => harness::train_anchors(&load_config(&s)?, &mut log)?,
        Command::SearchShift(s) => harness::search_shifts(&load_config(&s)?, &mut log)?,
        Command::Augment(s) => harness::augment_new(&load_config(&s)?, &mut log)?,
        Command::TrainTrans(s) => harness::train_plugins(&load_config(&s)?, &mut log)?,
        Command::Eval(s) => {
            harness::evaluate(&load_config(&s)?, &mut log)?;
        }
        Command::Report { shared, results } => report(&load_config(&shared)?, results.as_deref())?,
        Command::Run(s) => {
            let cfg = load_config(&s)?;
            harness::run_experiment_with(&cfg, &mut log)?;
            report(&cfg, None)?;
        }
        Command::ShowConfig(s) => println!("{}", load_config(&s)?.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
