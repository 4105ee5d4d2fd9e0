use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use repspace::config::{Overrides, RunConfig};
use repspace::pipeline::{Outcome, Pipeline, Stage};
use repspace_core::feature_store::load_dataset;
use repspace_core::transfer::search::{tune, SearchGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Synth,
    Ingest,
    TrainEncoders,
    TrainDecoders,
    Tournament,
    Embed,
    Mds,
    Scree,
    Encode,
    Project,
    Discriminate,
    Report,
    /// Every applicable stage in order, skipping those already up to date.
    All,
    /// Print each stage's state in the run directory.
    Status,
    /// Coordinate search over training hyperparameters on the ingested
    /// dataset; prints the best `[train]` table.
    Tune,
}

impl Command {
    fn stage(self) -> Option<Stage> {
        Stage::parse(self.to_possible_value()?.get_name())
    }
}

/// Map representations by how well their features transfer to one another,
/// then relate that map to measured brain responses.
#[derive(Debug, Parser)]
#[command(name = "repspace", version)]
struct Cli {
    command: Command,
    /// TOML run configuration.
    #[arg(long, short, env = "REPSPACE_CONFIG")]
    config: Option<PathBuf>,
    /// Recompute even when outputs are current, and accept a run directory
    /// made under a different configuration.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Print the configuration after defaults and overrides, then exit.
    #[arg(long)]
    print_effective_config: bool,
    /// Coordinate-descent passes for `tune`.
    #[arg(long, default_value_t = 3)]
    tune_rounds: usize,
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        output_dir: cli.output_dir.clone(),
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.print_effective_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let mut p = Pipeline::open(cfg, cli.force)?;
    match cli.command {
        Command::All => p.run_all(),
        Command::Status => {
            for stage in p.plan() {
                let state = if p.is_fresh(stage)? {
                    "up to date"
                } else {
                    "pending"
                };
                println!("{:<15} {state}", stage.name());
            }
            Ok(())
        }
        Command::Tune => {
            if !p.is_fresh(Stage::Ingest)? {
                p.run(Stage::Ingest)?;
            }
            let ds = load_dataset(&p.run_dir().join("ingest/corpus.toml"))?;
            let (best, trace) = tune(
                &ds,
                &p.config().train,
                &SearchGrid::default(),
                cli.tune_rounds,
            )
            .context("hyperparameter search failed")?;
            for step in &trace {
                log::info!(
                    "{:?} latent {} lr {}/{} batch {} -> {:.6}",
                    step.phase,
                    step.config.latent_dim,
                    step.config.lr_encoder,
                    step.config.lr_decoder,
                    step.config.batch_size,
                    step.score
                );
            }
            #[derive(serde::Serialize)]
            struct Out<'a> {
                train: &'a repspace_core::transfer::TrainConfig,
            }
            print!("{}", toml::to_string(&Out { train: &best })?);
            Ok(())
        }
        c => {
            let stage = c.stage().expect("every other command is a stage");
            if p.run(stage)? == Outcome::UpToDate {
                eprintln!("{}: up to date", stage.name());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
