//! `ncvq` — train, generate, and evaluate from a declarative config file.
//!
//! Verbs: `stage1`, `stage2`, `generate`, `evaluate`, `report`. Each takes
//! `--config <file>` plus optional `--seed` and `--out` overrides; the
//! `NCVQ_DATA` environment variable overrides the configured data root.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use ncvq_core::train;
use ncvq_core::ExperimentConfig;

#[derive(Parser)]
#[command(name = "ncvq", version, about = "Two-stage time-series generation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output (run) directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading config {}", self.config.display()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        let run_dir = cfg.out_dir.clone();
        Ok((cfg, run_dir))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the stage-1 tokenizer.
    Stage1(CommonArgs),
    /// Train the stage-2 prior against an existing stage-1 checkpoint.
    Stage2(CommonArgs),
    /// Sample synthetic series from trained checkpoints.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of series to generate.
        #[arg(long, default_value_t = 50)]
        n: usize,
        /// Conditioning class (unconditional when omitted).
        #[arg(long)]
        class: Option<u32>,
    },
    /// Compute probe accuracy, FID, IS and emit figures.
    Evaluate(CommonArgs),
    /// Summarize metric records from one or more run directories.
    Report {
        /// Run directories holding eval/metrics.txt.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Stage1(args) => {
            let (cfg, run_dir) = args.load()?;
            let result = train::run_stage1(&cfg, &run_dir).context("stage-1 training failed")?;
            let last = result.history.last();
            println!(
                "stage1 done: {} epochs, final reconstruction {:.6}, checkpoint {}",
                result.history.len(),
                last.map_or(f64::NAN, |r| r.reconstruction),
                result.checkpoint_dir.display()
            );
        }
        Command::Stage2(args) => {
            let (cfg, run_dir) = args.load()?;
            let result = train::run_stage2(&cfg, &run_dir).context("stage-2 training failed")?;
            println!(
                "stage2 done: {} epochs, final cross-entropy {:.6}, checkpoint {}",
                result.ce_curve.len(),
                result.ce_curve.last().copied().unwrap_or(f64::NAN),
                result.checkpoint_dir.display()
            );
        }
        Command::Generate { common, n, class } => {
            let (cfg, run_dir) = common.load()?;
            let path =
                train::run_generate(&cfg, &run_dir, n, class).context("generation failed")?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate(args) => {
            let (cfg, run_dir) = args.load()?;
            let report = train::run_eval(&cfg, &run_dir).context("evaluation failed")?;
            print!("{}", report.to_kv_text());
        }
        Command::Report { runs } => {
            let table = train::report_table(&runs).context("report failed")?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
