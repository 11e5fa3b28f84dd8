use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use she_core::harness::{self, ExperimentManifest, RunOptions, Summary};
use she_core::Error;

/// Stochastic heat equation experiments: solve, analyze, persist.
#[derive(Parser)]
#[command(name = "she", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON manifest.
    Run {
        manifest: PathBuf,
        #[command(flatten)]
        exec: Exec,
    },
    /// Run a named preset, or print its manifest with --emit.
    Preset {
        name: String,
        #[arg(long)]
        emit: bool,
        /// Print JSON instead of TOML.
        #[arg(long, requires = "emit")]
        json: bool,
        #[command(flatten)]
        exec: Exec,
    },
    /// List every violated constraint of a manifest.
    Validate { manifest: PathBuf },
    /// Recompute a recorded check and compare it with the summary.
    Replay {
        dir: PathBuf,
        #[arg(long)]
        check: String,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(clap::Args)]
struct Exec {
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory receiving the artifact directory.
    #[arg(long, env = harness::OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
}

const PASS: u8 = 0;
const CHECK_FAILED: u8 = 1;
const INVALID: u8 = 2;
const ABORTED: u8 = 3;

fn failure(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        Error::Validation(_) | Error::Format(_) => INVALID,
        _ => ABORTED,
    })
}

fn print_summary(s: &Summary, dir: &std::path::Path) {
    for c in &s.checks {
        println!("{:<24} {}", c.name, if c.pass { "PASS" } else { "FAIL" });
    }
    if s.blowups > 0 {
        println!("blow-ups: {}", s.blowups);
    }
    println!("summary hash {}", s.summary_hash);
    println!("artifacts in {}", dir.display());
}

fn run(m: &ExperimentManifest, exec: Exec) -> ExitCode {
    let opts = RunOptions {
        output_root: exec.output_root,
        workers: exec.workers,
    };
    match harness::run_experiment(m, &opts) {
        Ok(r) => {
            print_summary(&r.summary, &r.dir);
            ExitCode::from(if r.summary.pass { PASS } else { CHECK_FAILED })
        }
        Err(e) => failure(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { manifest, exec } => match ExperimentManifest::load(&manifest) {
            Ok(m) => run(&m, exec),
            Err(e) => failure(&e),
        },
        Command::Preset { name, emit, json, exec } => {
            let m = match harness::preset(&name) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(INVALID);
                }
            };
            if !emit {
                return run(&m, exec);
            }
            match if json { m.to_json() } else { m.to_toml() } {
                Ok(text) => {
                    println!("{}", text.trim_end());
                    ExitCode::from(PASS)
                }
                Err(e) => failure(&e),
            }
        }
        Command::Validate { manifest } => {
            match ExperimentManifest::load(&manifest).and_then(|m| m.validate()) {
                Ok(()) => {
                    println!("valid");
                    ExitCode::from(PASS)
                }
                Err(e) => failure(&e),
            }
        }
        Command::Replay { dir, check, workers } => match harness::replay(&dir, &check, workers) {
            Ok(r) => {
                let verdict = if r.recomputed.pass { "PASS" } else { "FAIL" };
                if r.identical {
                    println!("{check}: {verdict}, identical to the recorded outcome");
                    ExitCode::from(if r.recomputed.pass { PASS } else { CHECK_FAILED })
                } else {
                    println!("{check}: {verdict}, differs from the recorded outcome");
                    ExitCode::from(CHECK_FAILED)
                }
            }
            Err(e) => failure(&e),
        },
    }
}
