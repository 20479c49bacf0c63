use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use codelex::config::{Mode, PipelineConfig};
use codelex::pipeline::{self, parse_stages, Stage};
use codelex::simulate::simulate;

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "codelex", version, about = "R function-call lexicon pipeline")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides run.out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Token-level extraction without the syntax-aware scanner.
    #[arg(long, global = true)]
    naive: bool,
    /// Overrides catalog.threshold.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Scrape,
    Extract,
    Catalog,
    Filter,
    Diversity,
    Ordinate,
    Trends,
    Report,
    /// Write a synthetic corpus with known trends, plus a config to analyse it.
    Simulate,
    /// Run several stages in order.
    Run {
        /// Comma-separated stage names; all stages when omitted.
        #[arg(long)]
        stages: Option<String>,
    },
}

enum Failure {
    Config(anyhow::Error),
    Stage(anyhow::Error),
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &cli.out_dir {
        cfg.run.out_dir = o.clone();
    }
    if cli.naive {
        cfg.extract.mode = Mode::Naive;
    }
    if let Some(t) = cli.threshold {
        cfg.catalog.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli).map_err(Failure::Config)?;
    let stages = match &cli.command {
        Command::Simulate => {
            let truth = simulate(&cfg.simulate, cfg.epoch(), cfg.run.seed, &cfg.run.out_dir)
                .with_context(|| format!("simulating into {}", cfg.run.out_dir.display()))
                .map_err(Failure::Stage)?;
            log::info!(
                "wrote {} repositories over {} months to {}",
                truth.repos,
                truth.months,
                cfg.run.out_dir.display()
            );
            return Ok(());
        }
        Command::Run { stages: Some(list) } => parse_stages(list).map_err(|e| Failure::Config(anyhow::anyhow!(e)))?,
        Command::Run { stages: None } => Stage::ALL.to_vec(),
        Command::Scrape => vec![Stage::Scrape],
        Command::Extract => vec![Stage::Extract],
        Command::Catalog => vec![Stage::Catalog],
        Command::Filter => vec![Stage::Filter],
        Command::Diversity => vec![Stage::Diversity],
        Command::Ordinate => vec![Stage::Ordinate],
        Command::Trends => vec![Stage::Trends],
        Command::Report => vec![Stage::Report],
    };
    let manifest = pipeline::run(&cfg, &stages).context("pipeline setup").map_err(Failure::Stage)?;
    if let Some(f) = manifest.failed() {
        let msg = f.error.clone().unwrap_or_default();
        return Err(Failure::Stage(anyhow::anyhow!("stage {} failed: {msg}", f.stage)));
    }
    let n: usize = manifest.stages.iter().map(|s| s.artifacts.len()).sum();
    log::info!("{} stage(s) finished, {n} artifacts in {}", manifest.stages.len(), cfg.run.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_STAGE)
        }
    }
}
