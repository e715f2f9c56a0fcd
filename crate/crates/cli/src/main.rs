//! Scenario runner: reads a JSON config, runs one experiment and writes a
//! CSV table headed by a JSON metadata comment.

mod commands;
mod config;
mod error;
mod table;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ScenarioConfig;
use error::{config as config_error, CliError};

#[derive(Parser, Debug)]
#[command(name = "dressed-ion", version, about = "Dressed-state simulator scenarios for a trapped 171Yb+ ion")]
struct Cli {
    /// JSON scenario config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// RF frequency scan of the dressed manifold.
    Spectrum,
    /// Prepare/detect Rabi flops on the D, u and d lines.
    Rabi,
    /// STIRAP preparation, hold and release with population traces.
    Stirap,
    /// Survival curves under noise, or the field-modulation resonance sweep.
    Lifetime,
    /// Two-ion clock spectrum in a field gradient.
    Addressing,
    /// Qutrit state tomography.
    Tomo,
    /// Print the config JSON schema.
    Schema,
    /// Print the default config.
    Defaults,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Rabi => "rabi",
            Command::Stirap => "stirap",
            Command::Lifetime => "lifetime",
            Command::Addressing => "addressing",
            Command::Tomo => "tomo",
            Command::Schema => "schema",
            Command::Defaults => "defaults",
        }
    }
}

fn emit(bytes: &[u8], out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.as_ref().or(cfg.out.as_ref());
    let pretty = |v: &serde_json::Value| format!("{}\n", serde_json::to_string_pretty(v).expect("json serializes"));
    let run: fn(&ScenarioConfig) -> Result<table::ResultTable, CliError> = match cli.command {
        Command::Schema => return emit(pretty(&config::schema()).as_bytes(), out),
        Command::Defaults => return emit(pretty(&serde_json::json!(ScenarioConfig::default())).as_bytes(), out),
        Command::Spectrum => commands::spectrum,
        Command::Rabi => commands::rabi,
        Command::Stirap => commands::stirap,
        Command::Lifetime => commands::lifetime,
        Command::Addressing => commands::addressing,
        Command::Tomo => commands::tomo,
    };
    let table = match cli.threads {
        Some(0) => return Err(config_error("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config_error(e.to_string()))?
            .install(|| run(&cfg))?,
        None => run(&cfg)?,
    };
    let name = cli.command.name();
    let mut bytes = Vec::new();
    table::write(&table, name, cfg.seed, &commands::echo(&cfg, name), &mut bytes)?;
    emit(&bytes, out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
