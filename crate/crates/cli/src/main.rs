//! `madelung`: command-line front end to the scenario runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use madelung::scenario::{self, EXIT_CONFIG, OUTPUT_DIR_ENV};

/// Fallback output directory when none is configured.
const DEFAULT_OUTPUT_DIR: &str = "madelung-out";

#[derive(Parser)]
#[command(name = "madelung", version, about = "Hydrodynamic nonlinear Schrödinger scenario runner")]
struct Cli {
    /// Log errors only and do not print the summary.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `output.dir`.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        output_dir: Option<PathBuf>,
        /// Dotted-path override, e.g. `integrator.t_final=0.5`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Parse and check a config without running it.
    Validate {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the JSON schema of run configs.
    Schema,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    ExitCode::from(dispatch(cli) as u8)
}

fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&scenario::schema()).expect("schema serializes"));
            0
        }
        Command::Validate { config, overrides } => match load(&config, &overrides).and_then(|c| scenario::validate(&c)) {
            Ok(_) => {
                if !cli.quiet {
                    println!("{}: ok", config.display());
                }
                0
            }
            Err(e) => config_failure(&config, &e),
        },
        Command::Run {
            config,
            output_dir,
            overrides,
        } => {
            let cfg = match load(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return config_failure(&config, &e),
            };
            let dir = output_dir
                .or_else(|| cfg.output.dir.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
            log::info!("running `{}` into {}", cfg.scenario.name(), dir.display());
            match scenario::run(&cfg, &dir) {
                Ok(summary) => {
                    if !cli.quiet {
                        println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
                    }
                    if let Some(err) = &summary.error {
                        log::error!("{err}");
                    }
                    summary.exit_code
                }
                Err(e) => config_failure(&config, &e),
            }
        }
    }
}

fn load(path: &Path, overrides: &[String]) -> madelung::Result<scenario::RunConfig> {
    scenario::load_config(path, overrides)
}

fn config_failure(path: &Path, e: &madelung::Error) -> i32 {
    log::error!("{}: {e}", path.display());
    EXIT_CONFIG
}
