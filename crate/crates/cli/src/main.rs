//! `jad` drives the full amplification pipeline from one configuration
//! file: train a model, certify its spectral bound, craft adversarial
//! examples, measure amplification, evaluate the detector, sweep adaptive
//! attacks and compare benign corruptions.
//!
//! The general syntax is:
//!
//!     jad <command> --config <FILE> [--threads N]
//!
//! Commands: `train`, `certify`, `attack`, `amp`, `eval`, `adaptive`,
//! `corrupt-study`.  The configuration format and every key are documented
//! in the `config` module; all artifacts land under the configured
//! `out.dir` with fixed names.  Exit codes: 0 on success, 2 for
//! configuration or I/O problems, 3 for numeric failures.
//!
//! Every command is deterministic under a fixed configuration: running it
//! twice produces byte-identical artifacts, regardless of `--threads`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jad_core::{Error, Result};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "jad", version, about = "Adversarial amplification pipeline")]
struct Cli {
    /// Path to the key=value run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for sample-parallel stages (1 keeps runs sequential).
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes checkpoint.jadn and history.csv.
    Train,
    /// Certify the checkpoint's spectral bound; writes spectral.csv.
    Certify,
    /// Craft adversarial examples; writes attacks.csv and adversarial.f64.
    Attack,
    /// Measure per-sample amplification ratios; writes amp.csv.
    Amp,
    /// Calibrate and evaluate the detector; writes results.csv and scores.csv.
    Eval,
    /// Sweep adaptive attacks over eps, lambda and T; writes adaptive_results.csv.
    Adaptive,
    /// Compare attack amplification against benign corruptions; writes corruptions.csv.
    #[command(name = "corrupt-study")]
    CorruptStudy,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Numeric breakdowns exit 3; everything else (config, format, I/O,
/// dimension misuse) exits 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) | Error::SingularWeight { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))?;
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = config::RunConfig::load(&path)?;
    match cli.command {
        Command::Train => commands::train(&cfg),
        Command::Certify => commands::certify_cmd(&cfg),
        Command::Attack => commands::attack(&cfg),
        Command::Amp => commands::amp(&cfg),
        Command::Eval => commands::eval(&cfg),
        Command::Adaptive => commands::adaptive(&cfg),
        Command::CorruptStudy => commands::corrupt_study(&cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_failures_map_to_exit_three() {
        assert_eq!(exit_code(&Error::Numeric("overflow".into())), 3);
        assert_eq!(exit_code(&Error::SingularWeight { layer: 1, epoch: None }), 3);
    }

    #[test]
    fn config_and_io_failures_map_to_exit_two() {
        assert_eq!(exit_code(&Error::Config("bad".into())), 2);
        assert_eq!(exit_code(&Error::Parameter("bad".into())), 2);
        assert_eq!(exit_code(&Error::Format("bad".into())), 2);
        assert_eq!(
            exit_code(&Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "x"))),
            2
        );
    }

    #[test]
    fn cli_parses_every_subcommand() {
        for name in ["train", "certify", "attack", "amp", "eval", "adaptive", "corrupt-study"] {
            let cli = Cli::try_parse_from(["jad", name, "--config", "run.cfg"]).unwrap();
            assert_eq!(cli.threads, 1);
            assert_eq!(cli.config.as_deref(), Some(std::path::Path::new("run.cfg")));
        }
        let cli = Cli::try_parse_from(["jad", "--config", "c", "--threads", "4", "eval"]).unwrap();
        assert_eq!(cli.threads, 4);
        assert!(Cli::try_parse_from(["jad", "frobnicate"]).is_err());
    }
}
