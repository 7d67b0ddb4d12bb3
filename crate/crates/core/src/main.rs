use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use caml::harness::commands::{self, CommandOutput};
use caml::harness::config::ExperimentConfig;
use caml::harness::HarnessError;
use caml::meta::Learner;

#[derive(Parser)]
#[command(name = "caml", version, about = "Cluster-adaptive meta-learning on personalized particle environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the entity population.
    GenPopulation(Common),
    /// Train one policy per entity and track pairwise divergences.
    DivergenceStudy(Common),
    /// Train one learner on the support entities.
    Train {
        #[command(flatten)]
        common: Common,
        /// One of: caml, reptile, joint, pretrain-matched, pretrain-unmatched, random.
        #[arg(long)]
        learner: String,
    },
    /// Few-shot evaluation of trained learners on the query entities.
    Evaluate(Common),
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<CommandOutput, HarnessError> {
    match cli.command {
        Command::GenPopulation(c) => commands::gen_population(&load_config(c.config.as_deref(), c.seed)?, &c.out),
        Command::DivergenceStudy(c) => commands::divergence_study(&load_config(c.config.as_deref(), c.seed)?, &c.out),
        Command::Train { common: c, learner } => {
            let learner: Learner = learner.parse()?;
            commands::train(&load_config(c.config.as_deref(), c.seed)?, &c.out, learner)
        }
        Command::Evaluate(c) => commands::evaluate(&load_config(c.config.as_deref(), c.seed)?, &c.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = write!(stdout, "{}", out.summary);
            let _ = writeln!(stdout, "manifest: {}", out.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
