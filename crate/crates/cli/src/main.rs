use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nrds_cli::config::SCENARIOS;
use nrds_cli::{load, run_experiment, RunStatus};

#[derive(Parser)]
#[command(name = "nrds", version, about = "Pathwise checks for noise-perturbed dynamical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the check suites of a config; exit 0 if all pass, 2 if any fails, 1 on errors.
    Run {
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// List the built-in scenarios.
    List,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("NRDS_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("NRDS_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("NRDS_THREADS must be a positive integer, got 0".into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match cli.command {
        Command::List => {
            for (_, desc) in SCENARIOS {
                println!("{desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(cfg) => {
                let checks: Vec<&str> = cfg.checks.iter().map(|c| c.name()).collect();
                println!(
                    "ok: scenario {}, {} eta value(s), {} seed(s), checks {}",
                    cfg.scenario,
                    cfg.etas.len(),
                    cfg.seeds.len(),
                    checks.join(", ")
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {}: {e}", config.display());
                ExitCode::from(1)
            }
        },
        Command::Run { config, out_dir } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", config.display());
                    return ExitCode::from(1);
                }
            };
            if let Some(o) = out_dir {
                cfg.out_dir = o;
            }
            match run_experiment(&cfg) {
                Ok(status) => {
                    println!(
                        "{} ({})",
                        match status {
                            RunStatus::Passed => "PASSED",
                            RunStatus::Failed => "FAILED",
                            RunStatus::Error => "ERROR",
                        },
                        cfg.out_dir.join("manifest.json").display()
                    );
                    ExitCode::from(status.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: writing outputs: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
