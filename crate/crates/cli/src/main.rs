use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rsae::config::{self, ExperimentConfig};
use rsae::pipeline;
use rsae::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "rsae", version, about = "Denoise noisy trajectories and discover sparse latent dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the system and write clean and noisy datasets.
    Generate(Common),
    /// Separate measurement noise from the generated trajectories.
    Denoise(Common),
    /// Train the autoencoder and its sparse latent model.
    Train(Common),
    /// Evaluate a trained model on the test trajectory.
    Eval(Common),
    /// Run generate, denoise, train and eval in sequence.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; keys it sets override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Noise standard deviation as a fraction of the signal's.
    #[arg(long)]
    noise_level: Option<f64>,
    /// One of smoke, paper-lorenz-5, paper-lorenz-10, paper-lorenz-15, toy-linear.
    #[arg(long)]
    preset: Option<String>,
    /// Validate and print the resolved configuration without running.
    #[arg(long)]
    dry_run: bool,
}

impl Common {
    fn resolve(&self) -> CliResult<ExperimentConfig> {
        let base = match &self.preset {
            Some(name) => config::preset(name)?,
            None => ExperimentConfig::default(),
        };
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                config::parse_over(&base, &text, &path.display().to_string())?
            }
            None => base,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(level) = self.noise_level {
            cfg.noise_level = level;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, stage): (&Common, fn(&ExperimentConfig, &std::path::Path, pipeline::Log) -> CliResult<()>) =
        match &cli.command {
            Command::Generate(c) => (c, pipeline::generate),
            Command::Denoise(c) => (c, pipeline::denoise),
            Command::Train(c) => (c, pipeline::train_model),
            Command::Eval(c) => (c, |cfg, out, log| pipeline::evaluate(cfg, out, log).map(drop)),
            Command::Pipeline(c) => (c, |cfg, out, log| pipeline::run_pipeline(cfg, out, log).map(drop)),
        };
    let cfg = common.resolve()?;
    if common.dry_run {
        print!("{}", cfg.table());
        return Ok(());
    }
    rsae::io::create_dir(&common.out)?;
    let mut log = |line: &str| println!("{line}");
    stage(&cfg, &common.out, &mut log)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsae: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
