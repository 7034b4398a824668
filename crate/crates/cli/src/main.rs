use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use densq::config::RunConfig;
use densq::pipeline::{Pipeline, Stage};
use densq::Result;

/// Quantized-filter dynamic programming for consumption and investment
/// under partially observed stochastic volatility.
#[derive(Parser)]
#[command(name = "densq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: GlobalOpts,
}

#[derive(Args)]
struct GlobalOpts {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dotted-path override such as `model.delta=0.9`; repeatable.
    #[arg(long = "stage-override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train the density codebook.
    TrainQuantizer,
    /// Remove near-duplicate codebook rows.
    Prune,
    /// Backward induction over wealth and codebook rows.
    Solve,
    /// Roll the solved policy and benchmarks forward on simulated paths.
    Simulate,
    /// Error-bound constants and the composed bound.
    Bounds,
    /// Collect headline figures into report.json and report.md.
    Report,
    /// Every stage in order.
    All,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn load(opts: &GlobalOpts) -> Result<RunConfig> {
    let mut overrides = opts.overrides.clone();
    if let Some(seed) = opts.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &opts.out {
        overrides.push(format!("output_dir={:?}", out.display().to_string()));
    }
    match &opts.config {
        Some(path) => RunConfig::load(path, &overrides),
        None => RunConfig::from_toml_str("", &overrides),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(&cli.opts)?;
    let stages: Vec<Stage> = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        Command::TrainQuantizer => vec![Stage::TrainQuantizer],
        Command::Prune => vec![Stage::Prune],
        Command::Solve => vec![Stage::Solve],
        Command::Simulate => vec![Stage::Simulate],
        Command::Bounds => vec![Stage::Bounds],
        Command::Report => vec![Stage::Report],
        Command::All => Stage::ALL.to_vec(),
    };
    let mut pipeline = Pipeline::new(cfg)?;
    for stage in stages {
        let start = Instant::now();
        pipeline.run(stage)?;
        eprintln!("{stage}: done in {:.1}s", start.elapsed().as_secs_f64());
    }
    eprintln!("artifacts in {}", pipeline.dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
