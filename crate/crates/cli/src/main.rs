mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use unfold_core::uncertainty::BandMethod;

#[derive(Parser)]
#[command(name = "unfold", version, about = "Empirical Bayes unfolding of Poisson-smeared spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a smeared histogram from the configured truth.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Unfold an observed histogram and write bands, trace and plots.
    Unfold {
        #[command(flatten)]
        common: Common,
        /// Observed histogram CSV (`bin_lo,bin_hi,count`).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        path: PathFlags,
        #[command(flatten)]
        methods: MethodFlags,
    },
    /// Empirical coverage study over simulated replicates.
    Coverage {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        n_replicates: usize,
        /// Compare bias-correction iteration counts instead of methods, e.g. `0,1,5`.
        #[arg(long, value_delimiter = ',')]
        nbc_sweep: Vec<usize>,
        #[command(flatten)]
        path: PathFlags,
        #[command(flatten)]
        methods: MethodFlags,
    },
    /// Z boson analysis: response fit, unfolding and truth overlay.
    Zboson {
        #[command(flatten)]
        common: Common,
        /// Unfolding sample; a synthetic one is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Sample for the Crystal Ball fit over the wide window.
        #[arg(long)]
        fit_data: Option<PathBuf>,
        #[command(flatten)]
        path: PathFlags,
        #[command(flatten)]
        methods: MethodFlags,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output file for `simulate`, output directory otherwise.
    #[arg(long)]
    out: PathBuf,
    /// Root seed; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate-level parallelism; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PathFlags {
    /// Ridge estimate with Gaussian-evidence delta.
    #[arg(long, conflicts_with = "full")]
    fast: bool,
    /// Posterior mean with Monte Carlo EM delta.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct MethodFlags {
    /// Band method(s); repeat or separate with commas.
    #[arg(long = "method", value_delimiter = ',')]
    methods: Vec<BandMethod>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UNFOLD_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
