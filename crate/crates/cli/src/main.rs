use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qlyap_core::error::Error;
use qlyap_core::scenario::{self, Overrides, ScenarioConfig};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "qlyap",
    about = "Lyapunov control of finite-level quantum systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate every initial state of a scenario and write the reports.
    Run {
        config: PathBuf,
        /// Output directory for CSVs, analysis.json and summary files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of seeded initial states (random, perturbed and above-critical-point specs).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Critical points, target regularity and invariant-set checks, no simulation.
    Analyze {
        config: PathBuf,
        /// Also write analysis.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in presets, or print one as a full config.
    Presets {
        #[arg(long, value_name = "NAME")]
        dump: Option<String>,
    },
    Version,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(path: &Path, overrides: &Overrides) -> Result<ScenarioConfig, Failure> {
    scenario::load_config_with(path, overrides).map_err(|e| match e {
        Error::Io(io) => Failure::Config(format!("cannot read {}: {io}", path.display())),
        other => other.into(),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            dt,
            horizon,
        } => {
            let cfg = load(&config, &Overrides { seeds, dt, horizon })?;
            let outcome = scenario::run_scenario(&cfg, out.as_deref())?;
            print!("{}", scenario::render_text(&outcome.summary));
            if outcome.failed_runs() > 0 {
                return Err(Failure::Runtime(format!(
                    "{} run(s) failed",
                    outcome.failed_runs()
                )));
            }
        }
        Command::Analyze { config, out } => {
            let cfg = load(&config, &Overrides::default())?;
            let built = cfg.build()?;
            let report = scenario::analyze(&cfg, &built)?;
            if let Some(dir) = out {
                scenario::write_analysis(&dir, &report)?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&report).map_err(Error::from)?
            );
        }
        Command::Presets { dump: Some(name) } => {
            let cfg = scenario::preset(&name)
                .ok_or_else(|| Failure::Config(format!("unknown preset {name:?}")))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&cfg).map_err(Error::from)?
            );
        }
        Command::Presets { dump: None } => {
            for (name, what) in scenario::PRESETS {
                println!("{name:<30} {what}");
            }
        }
        Command::Version => println!("qlyap {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
