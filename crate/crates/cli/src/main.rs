use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vcsde_cli::commands;
use vcsde_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "vcsde", version, about = "Varying-coefficient SDE estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit a model and write the fit artifact.
    Fit,
    /// Simulate from constant parameters or a fitted model.
    Simulate,
    /// Pointwise and simultaneous confidence bands.
    Band,
    /// Posterior predictive check of dive statistics.
    Ppc,
    /// Simulation study of band coverage.
    SimStudy,
    /// Smoothed 2-D track from a state-space fit.
    SmoothTrack,
}

fn run(cli: &Cli) -> CliResult<String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("cannot configure {n} threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None if matches!(cli.command, Command::SimStudy | Command::Simulate) => RunConfig::default(),
        None => return Err(CliError::Input("--config is required".into())),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    match cli.command {
        Command::Fit => commands::cmd_fit(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Band => commands::cmd_band(&cfg),
        Command::Ppc => commands::cmd_ppc(&cfg),
        Command::SimStudy => commands::cmd_sim_study(&cfg),
        Command::SmoothTrack => commands::cmd_smooth_track(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(s) => {
            print!("{s}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
