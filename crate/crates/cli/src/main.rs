use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rnls_cli::{parse_config, run, Experiment, LoadedConfig};

#[derive(Parser)]
#[command(name = "rnls", version, about = "Random-potential Schrödinger/Hartree experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (flat TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "RNLS_THREADS", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Evolve one sampled path.
    Path,
    /// Solve the averaged scalar equation.
    Average,
    /// Solve the averaged Liouville equation (d = 1).
    Liouville,
    /// Monte Carlo ensemble with conditional averages.
    Ensemble,
    /// Eigenvalues of the dissipative operator.
    Spectrum,
    /// Smallest singular value of the Kato-Birman operator over the λ grid.
    KbScan,
    /// Run every verification check.
    VerifyAll,
    /// Power-law fit of a time series.
    FitDecay,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::Path => Experiment::Path,
            Command::Average => Experiment::Average,
            Command::Liouville => Experiment::Liouville,
            Command::Ensemble => Experiment::Ensemble,
            Command::Spectrum => Experiment::Spectrum,
            Command::KbScan => Experiment::KbScan,
            Command::VerifyAll => Experiment::VerifyAll,
            Command::FitDecay => Experiment::FitDecay,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut loaded = match &cli.config {
        Some(p) => match parse_config(p) {
            Ok(c) => c,
            Err(e) => {
                eprint!("{e}");
                return ExitCode::from(2);
            }
        },
        None => LoadedConfig::defaults(),
    };
    if let Some(seed) = cli.seed {
        loaded.config.seed = seed;
    }
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot configure {} threads: {e}", cli.threads);
            return ExitCode::from(2);
        }
    }
    let threads = rayon::current_num_threads();
    match run(cli.command.into(), &loaded, &cli.out, threads) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            println!("artifacts: {}", outcome.dir.display());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
