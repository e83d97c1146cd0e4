use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpsgd::harness::{
    compute_references, load_config, run_experiment, speedup_sweep, ExperimentConfig, HarnessError,
    OUTPUT_DIR_ENV,
};

#[derive(Parser)]
#[command(
    name = "cpsgd",
    version,
    about = "Compressed primal-dual SGD simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a config and write traces.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Replaces the config's seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Record Lyapunov components for CP-SGD runs.
        #[arg(long)]
        lyapunov: bool,
    },
    /// Agent-count sweep with the horizon-tuned schedule.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        agents: Vec<usize>,
        #[arg(long)]
        rounds: u64,
        #[arg(long)]
        beta2: Option<f64>,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
    /// Compute and cache x* and f* for each seed.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
    },
}

const EXIT_PARTIAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn config_error(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    load_config(path).map_err(|e| config_error(&e))
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seeds,
            lyapunov,
        } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            cfg.lyapunov |= lyapunov;
            if let Err(e) = cfg.validate() {
                return config_error(&e);
            }
            let dir = cfg.resolve_output_dir(out.as_deref());
            match run_experiment(&cfg, &dir) {
                Ok(outcome) => {
                    for (label, seed, path) in &outcome.traces {
                        println!("{label}\tseed {seed}\t{}", path.display());
                    }
                    for f in &outcome.failures {
                        eprintln!("failed: {} seed {}: {}", f.label, f.seed, f.error);
                    }
                    if outcome.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_PARTIAL)
                    }
                }
                Err(e @ HarnessError::Validation { .. }) | Err(e @ HarnessError::Parse(_)) => {
                    config_error(&e)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_PARTIAL)
                }
            }
        }
        Command::Sweep {
            config,
            agents,
            rounds,
            beta2,
            out,
        } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let summary = match speedup_sweep(&cfg, &agents, rounds, beta2) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_PARTIAL);
                }
            };
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("n\tomega\teta\tmean_grad_norm_sq");
            for r in &summary.rows {
                println!(
                    "{}\t{:.6}\t{:.6}\t{:e}",
                    r.n, r.omega, r.eta, r.mean_grad_norm_sq
                );
            }
            let dir = cfg.resolve_output_dir(out.as_deref());
            let path = dir.join("sweep_summary.json");
            let written = std::fs::create_dir_all(&dir)
                .map_err(|e| e.to_string())
                .and_then(|_| serde_json::to_vec_pretty(&summary).map_err(|e| e.to_string()))
                .and_then(|bytes| {
                    cpsgd::diagnostics::write_atomic(&path, &bytes).map_err(|e| e.to_string())
                });
            if let Err(e) = written {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_PARTIAL);
            }
            ExitCode::SUCCESS
        }
        Command::Oracle { config, out } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let dir = cfg.resolve_output_dir(out.as_deref());
            match compute_references(&cfg, &dir) {
                Ok(refs) => {
                    for (seed, r) in refs {
                        println!("seed {seed}\tf* = {:e}\tx* = {:?}", r.f_star, r.x_star);
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_PARTIAL)
                }
            }
        }
    }
}
