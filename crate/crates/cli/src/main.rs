use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fkpath_core::config::builtin_catalog;
use fkpath_core::runner::{run_file, validate_file, EXIT_SCHEMA};

/// Feynman-Kac path-space particle experiments.
#[derive(Parser)]
#[command(name = "fkpath", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// List the built-in models.
    Models,
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => match run_file(&config) {
            Ok(report) => {
                for check in &report.checks {
                    println!("{}", check.line());
                }
                for file in &report.files {
                    eprintln!("wrote {}", file.display());
                }
                exit(report.exit_code())
            }
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                exit(e.exit_code())
            }
        },
        Command::Models => {
            for entry in builtin_catalog() {
                println!("{}", entry.name);
                println!("  {}", entry.description);
                println!("  potential_sup = {}", entry.potential_sup);
                for line in entry.fragment.lines() {
                    println!("    {line}");
                }
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match validate_file(&config) {
            Ok(cfg) => {
                println!("ok: {} ({})", config.display(), cfg.experiment.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{}: {e}", config.display());
                exit(EXIT_SCHEMA)
            }
        },
    }
}
