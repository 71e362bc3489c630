//! Command-line front end for the Monte Carlo harness.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime or
//! numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use barc_core::harness::{config::StudyKind, emit_results, run_experiment, ExperimentConfig};
use barc_core::Error;

#[derive(Parser)]
#[command(
    name = "barc",
    about = "Blind adaptive reduced-rank interference-suppression simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study and write CSV/JSON results.
    Simulate {
        /// JSON experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the study kind from the config.
        #[arg(long)]
        study: Option<String>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of Monte Carlo runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory (default: results/<study>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Also write a gnuplot script next to the CSV.
        #[arg(long)]
        emit_plot: bool,
    },
    /// Parse and validate a configuration file, printing the resolved form.
    ValidateConfig { path: PathBuf },
    /// List the available study kinds.
    ListStudies,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::ConfigValidation { .. } | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    ExperimentConfig::from_json(&text)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate {
            config,
            study,
            seed,
            runs,
            out,
            threads,
            emit_plot,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(study) = study {
                cfg.study = StudyKind::parse(&study)?;
            }
            if let Some(seed) = seed {
                cfg.master_seed = seed;
            }
            if let Some(runs) = runs {
                cfg.num_runs = runs;
            }
            if let Some(threads) = threads {
                cfg.threads = threads;
            }
            cfg.validate()?;

            let results = run_experiment(&cfg)?;
            let out_dir = out.unwrap_or_else(|| PathBuf::from("results").join(cfg.study.name()));
            let written = emit_results(&results, &out_dir, emit_plot)?;
            for point in &results.points {
                let ber = point
                    .ber
                    .map(|b| format!("{b:.6e}"))
                    .unwrap_or_else(|| "NA".into());
                let extra = point
                    .b_avg
                    .map(|b| format!("  B_avg={b:.2}"))
                    .unwrap_or_default();
                println!(
                    "{}={:<8} BER={ber} (se {:.2e}, {} bits){extra}",
                    point.axis, point.value, point.ber_se, point.bits
                );
            }
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::ValidateConfig { path } => {
            let cfg = load_config(&path)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).expect("config serializes")
            );
            Ok(())
        }
        Command::ListStudies => {
            for study in StudyKind::all() {
                println!("{}", study.name());
            }
            Ok(())
        }
    }
}
