mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_config, CliError, CliResult, Overrides};

#[derive(Parser)]
#[command(
    name = "fdrlab",
    version,
    about = "Ensemble quantum dynamics: equilibrium states, mean evolution, \
             linear response, and fluctuation–dissipation diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the Gibbs and adjusted equilibrium states with energies and entropies
    Equilibrium(RunArgs),
    /// Evolve the ensemble-averaged state; write state, deviation, entropy, and residual series
    Evolve(RunArgs),
    /// Measure the finite-difference impulse response and compare it to the assembled commutator form
    Response(RunArgs),
    /// Write exact line spectra with ratio checks, the KMS comparison, and windowed transforms
    Fdr(RunArgs),
    /// Run the invariant suite; exit 0 only if every check passes
    Check(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Output directory (overrides the config's outputs.directory)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads for ensemble averaging (default: all cores)
    #[arg(long)]
    threads: Option<usize>,

    /// Time-step override
    #[arg(long)]
    dt: Option<f64>,

    /// Step-count override
    #[arg(long)]
    steps: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            dt: self.dt,
            steps: self.steps,
        }
    }
}

fn run(command: &Command) -> CliResult<()> {
    let args = match command {
        Command::Equilibrium(a)
        | Command::Evolve(a)
        | Command::Response(a)
        | Command::Fdr(a)
        | Command::Check(a) => a,
    };
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("failed to size the thread pool: {e}")))?;
    }
    let (config, sha256) = load_config(&args.config)?;
    let exp = config.resolve(sha256, &args.overrides())?;
    match command {
        Command::Equilibrium(_) => commands::cmd_equilibrium(&exp),
        Command::Evolve(_) => commands::cmd_evolve(&exp),
        Command::Response(_) => commands::cmd_response(&exp),
        Command::Fdr(_) => commands::cmd_fdr(&exp),
        Command::Check(_) => commands::cmd_check(&exp),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FDRLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            // The suite prints its own table; everything else gets a one-line
            // diagnostic on stderr.
            if !matches!(err, CliError::SuiteFailed) {
                eprintln!("error: {err}");
            }
            ExitCode::from(err.exit_code())
        }
    }
}
