use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dnparabolic::experiments::{self, exit, ExperimentConfig, RunRecord, Scenario};
use dnparabolic::Error;

#[derive(Parser)]
#[command(name = "dnparabolic", version, about = "Scenario runner for doubly nonlinear mixed local-nonlocal evolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config (a config with a [sweep] section runs every point).
    Run {
        config: PathBuf,
        /// Set a dotted key, e.g. `--override beta.m=2`; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a built-in scenario config.
    Verify {
        scenario: String,
        /// Smaller grid and fewer steps.
        #[arg(long)]
        quick: bool,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the sweep declared in a config.
    Sweep {
        config: PathBuf,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn apply_overrides(mut cfg: ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig, Error> {
    for o in overrides {
        cfg = cfg.with_override_str(o)?;
    }
    Ok(cfg)
}

fn load(command: &Command) -> Result<(ExperimentConfig, bool), Error> {
    match command {
        Command::Run { config, overrides } => Ok((apply_overrides(experiments::read_config(config)?, overrides)?, false)),
        Command::Sweep { config, overrides } => {
            let cfg = apply_overrides(experiments::read_config(config)?, overrides)?;
            if cfg.sweep.is_none() {
                return Err(Error::Config(format!("{} has no [sweep] section", config.display())));
            }
            Ok((cfg, true))
        }
        Command::Verify {
            scenario,
            quick,
            overrides,
        } => {
            let sc = Scenario::from_name(scenario).ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown scenario {scenario:?}; expected one of {}", names.join(", ")))
            })?;
            let mut cfg = experiments::builtin_config(sc, *quick)?;
            cfg.output_dir = PathBuf::from("verify").join(sc.name());
            Ok((apply_overrides(cfg, overrides)?, false))
        }
    }
}

fn report(record: &RunRecord) {
    for line in &record.lines {
        println!("{line}");
    }
    println!(
        "{} -> {}",
        if record.exit_code == exit::PASS { "PASS" } else { "FAIL" },
        record.output_dir.display()
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, _) = match load(&cli.command) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(experiments::exit_code_for(&e) as u8);
        }
    };
    for w in cfg.regime_warnings() {
        eprintln!("warning: regime hypothesis violated: {w}");
    }
    let code = if cfg.sweep.is_some() {
        match experiments::execute_sweep(&cfg) {
            Ok(records) => {
                for r in &records {
                    report(r);
                }
                records.iter().map(|r| r.exit_code).max().unwrap_or(exit::PASS)
            }
            Err(e) => {
                eprintln!("error: {e}");
                experiments::exit_code_for(&e)
            }
        }
    } else {
        let record = experiments::execute(&cfg);
        report(&record);
        record.exit_code
    };
    ExitCode::from(code as u8)
}
