use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedmeter_cli::config::SEED_ENV;
use fedmeter_cli::presets::PRESETS;
use fedmeter_cli::{runner, ExperimentConfig};

const EXIT_RUNTIME: u8 = 1;
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(
    name = "fedmeter",
    version,
    about = "Federated PV disaggregation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point of a config and write artifacts to output_dir.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// `--key value` pairs applied on top of the file.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Print every problem with a config; exit 2 if there are any.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
}

fn load(path: &PathBuf, overrides: &[String]) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    cfg.apply_overrides(overrides).map_err(|e| e.to_string())?;
    let env = std::env::var(SEED_ENV).ok();
    cfg.apply_seed_env(env.as_deref())
        .map_err(|e| format!("{SEED_ENV}: {e}"))?;
    Ok(cfg)
}

fn load_valid(path: &PathBuf, overrides: &[String]) -> Result<ExperimentConfig, ExitCode> {
    let cfg = load(path, overrides).map_err(|msg| {
        eprintln!("error: {msg}");
        ExitCode::from(EXIT_INVALID)
    })?;
    let diagnostics = cfg.validate();
    if diagnostics.is_empty() {
        return Ok(cfg);
    }
    for d in &diagnostics {
        eprintln!("invalid `{}`: {}", d.key, d.message);
    }
    Err(ExitCode::from(EXIT_INVALID))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets {
            action: PresetAction::List,
        } => {
            for p in PRESETS {
                println!("{:<14} {}", p.name, p.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config, overrides } => match load_valid(&config, &overrides) {
            Ok(_) => {
                println!("ok");
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run { config, overrides } => {
            let cfg = match load_valid(&config, &overrides) {
                Ok(cfg) => cfg,
                Err(code) => return code,
            };
            match runner::run(&cfg) {
                Ok(summary) => {
                    for row in &summary.table {
                        let eps = row.epsilon.map_or("inf".to_string(), |e| e.to_string());
                        println!(
                            "{} n_c={} eps={} mu={} E2={} seed={} mean_nrmse={:.5}",
                            row.method,
                            row.dropout_ratio,
                            eps,
                            row.mu,
                            row.epochs_local,
                            row.seed,
                            row.mean
                        );
                    }
                    println!("artifacts in {}", cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
    }
}
