use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mocdma::cli::{
    codes_dump, emission_summary, emission_summary_csv, run_experiment, ErrorRecord, RunOptions,
};
use mocdma::config::ScenarioConfig;
use mocdma::harness::run_matrix_selftest;
use mocdma::Error;

#[derive(Parser)]
#[command(
    name = "mocdma",
    version,
    about = "Molecular CDMA link-level BER simulator"
)]
struct Cli {
    /// Override the config's rng seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for result files.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// `off` disables the counting noise (identity/debug runs).
    #[arg(long, global = true, value_enum, default_value_t = Noise::On)]
    noise: Noise,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Noise {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run the BER sweep(s) described by a config file.
    Run { config: PathBuf },
    /// Run the built-in representation and identity checks.
    Selftest,
    /// Print per-NM molecules emitted per bit for each swept Q.
    EmissionSummary { config: PathBuf },
    /// Inspect spreading codes.
    Codes {
        #[command(subcommand)]
        action: CodesAction,
    },
}

#[derive(Subcommand)]
enum CodesAction {
    /// Print the code assigned to each NM.
    Dump { config: PathBuf },
}

fn execute(cli: &Cli) -> Result<bool, Error> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Unsupported(e.to_string()))?;
    }
    let opts = RunOptions {
        seed: cli.seed,
        noise_off: cli.noise == Noise::Off,
    };
    match &cli.command {
        Command::Run { config } => {
            let cfg = ScenarioConfig::load(config)?;
            let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            for out in run_experiment(&cfg, stem, &cli.out_dir, &opts)? {
                println!("{}", out.csv.display());
            }
            Ok(true)
        }
        Command::Selftest => {
            let report = run_matrix_selftest();
            for c in &report.checks {
                println!(
                    "{} {:<28} max deviation {:.3e} (tolerance {:.0e})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_deviation,
                    c.tolerance
                );
            }
            Ok(report.passed())
        }
        Command::EmissionSummary { config } => {
            let mut cfg = ScenarioConfig::load(config)?;
            opts.apply(&mut cfg);
            print!("{}", emission_summary_csv(&emission_summary(&cfg)?));
            Ok(true)
        }
        Command::Codes {
            action: CodesAction::Dump { config },
        } => {
            let cfg = ScenarioConfig::load(config)?;
            print!("{}", codes_dump(&cfg)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let record = ErrorRecord::from_error(&e);
            eprintln!(
                "{}",
                serde_json::to_string(&record).expect("error record serialises")
            );
            ExitCode::from(2)
        }
    }
}
