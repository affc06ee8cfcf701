use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lqg_core::harness::{self, ExperimentConfig, OutputFormat, OUT_DIR_ENV};
use lqg_core::Error;

#[derive(Parser)]
#[command(name = "lqg-lab", version, about = "Monte Carlo experiments for lattice LQG metrics and measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its report.
    Run {
        config: PathBuf,
        /// Overrides `base_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Pool the records of JSON reports into one CSV table.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

fn failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::FAILURE,
    }
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    match ExperimentConfig::load(path) {
        Err(Error::Io(msg)) => Err(Error::config("config", format!("{}: {msg}", path.display()))),
        other => other,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                println!("{}: valid {} config, {} samples", config.display(), cfg.kind.name(), cfg.sample_count);
                ExitCode::SUCCESS
            }
            Err(e) => failure(&e),
        },
        Command::Run {
            config,
            seed,
            workers,
            out_dir,
            format,
        } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => return failure(&e),
            };
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let report = match harness::run(&cfg, workers) {
                Ok(r) => r,
                Err(e) => return failure(&e),
            };
            let dir = harness::resolve_out_dir(out_dir.as_deref(), &cfg);
            let format = match format {
                Format::Json => OutputFormat::Json,
                Format::Csv => OutputFormat::Csv,
            };
            match harness::write_report(&report, &dir, format) {
                Ok(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                }
                Err(e) => return failure(&e),
            }
            let failed = report.failed_samples();
            if failed > 0 {
                eprintln!("{failed} of {} records failed; see the report", report.records.len());
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }
        Command::Summarize { reports, out } => {
            let loaded: Result<Vec<_>, _> = reports.iter().map(|p| harness::read_report(p)).collect();
            let table = match loaded.and_then(|r| harness::summarize(&r)) {
                Ok(t) => t,
                Err(e) => return failure(&e),
            };
            match out {
                Some(path) => match harness::write_atomic(&path, table.as_bytes()) {
                    Ok(()) => ExitCode::SUCCESS,
                    Err(e) => failure(&e),
                },
                None => {
                    print!("{table}");
                    ExitCode::SUCCESS
                }
            }
        }
    }
}
