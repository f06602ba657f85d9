//! rwrp-lab: batch experiment runner for the random-walk-in-random-
//! potential laboratory.
//!
//! Exit codes: 0 success, 2 config/schema violation, 3 budget exceeded,
//! 4 internal certification failure, 1 other runtime errors. Failures
//! leave a machine-readable error.json in the output directory.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{load_config, ExperimentKind, LoadedConfig};
use output::{Emitter, Manifest};

#[derive(Parser)]
#[command(
    name = "rwrp-lab",
    version,
    about = "Batch experiments for random walks in random potentials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and validate a config file without running it.
    Validate { config: PathBuf },
    /// List the available experiments.
    ListExperiments,
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    kind: String,
    exit: i32,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config } => run(&config),
        Command::Validate { config } => match load_config(&config) {
            Ok(loaded) => {
                println!(
                    "ok: {} (config_hash {})",
                    loaded.config.experiment.name(),
                    loaded.hash
                );
                0
            }
            Err(e) => {
                eprintln!("config error: {e}");
                2
            }
        },
        Command::ListExperiments => {
            for (kind, blurb) in ExperimentKind::all() {
                println!("{:<14} {}", kind.name(), blurb);
            }
            0
        }
    };
    std::process::exit(code);
}

fn resolve_threads(cfg_threads: Option<usize>) -> usize {
    if let Ok(v) = std::env::var("RWRP_LAB_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n;
        }
    }
    cfg_threads.unwrap_or(0)
}

fn run(path: &std::path::Path) -> i32 {
    let loaded: LoadedConfig = match load_config(path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    let cfg = &loaded.config;
    let formats = cfg
        .output
        .formats
        .clone()
        .unwrap_or_else(|| vec!["csv".into(), "json".into()]);
    let mut emitter = match Emitter::new(std::path::Path::new(&cfg.output.dir), &loaded.hash, &formats)
    {
        Ok(e) => e,
        Err(e) => {
            eprintln!("cannot prepare output directory: {e}");
            return 1;
        }
    };

    let threads = resolve_threads(cfg.run.threads);
    let started = Instant::now();
    let outcome = if threads == 0 {
        experiments::run(cfg, &mut emitter)
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(|| experiments::run(cfg, &mut emitter)),
            Err(e) => {
                eprintln!("cannot build worker pool: {e}");
                return 1;
            }
        }
    };
    let wall = started.elapsed().as_secs_f64();

    match outcome {
        Ok(notes) => {
            let manifest = Manifest {
                tool: "rwrp-lab".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                experiment: cfg.experiment.name().into(),
                config_hash: loaded.hash.clone(),
                master_seed: cfg.run.master_seed,
                threads,
                wall_seconds: wall,
                notes,
                outputs: emitter
                    .written
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
            };
            if let Err(e) = emitter.write_manifest(&manifest) {
                eprintln!("cannot write manifest: {e}");
                return 1;
            }
            println!(
                "{}: done in {wall:.2}s, outputs in {}",
                cfg.experiment.name(),
                cfg.output.dir
            );
            0
        }
        Err(err) => {
            let code = experiments::exit_code(&err);
            let report = ErrorReport {
                error: err.to_string(),
                kind: experiments::error_kind(&err).into(),
                exit: code,
            };
            let text = serde_json::to_string_pretty(&report).unwrap_or_else(|_| err.to_string());
            let path = std::path::Path::new(&cfg.output.dir).join("error.json");
            if std::fs::write(&path, format!("{text}\n")).is_err() {
                eprintln!("{text}");
            }
            eprintln!("{}: failed: {err}", cfg.experiment.name());
            code
        }
    }
}
