//! Config-driven experiments: scenario runners, sweeps and CSV/JSON output.

pub mod config;
pub mod output;
pub mod scenarios;

pub use config::{parse_config, read_config, ExperimentConfig, Scenario};
pub use output::{emit_outputs, execute, execute_sweep, resolve_output_dir, RunRecord, Summary, OUTPUT_ROOT_ENV};
pub use scenarios::{exit, exit_code_for, run_scenario, ScenarioOutcome};

use crate::error::Result;

/// Built-in config of `scenario`; `quick` shrinks it to a smoke-test size.
pub fn builtin_config(scenario: Scenario, quick: bool) -> Result<ExperimentConfig> {
    let text = match scenario {
        Scenario::Evolve => include_str!("../../configs/evolve.toml"),
        Scenario::Extinction => include_str!("../../configs/extinction.toml"),
        Scenario::Blowup => include_str!("../../configs/blowup.toml"),
        Scenario::Stabilization => include_str!("../../configs/stabilization.toml"),
        Scenario::Contraction => include_str!("../../configs/contraction.toml"),
        Scenario::Comparison => include_str!("../../configs/comparison.toml"),
        Scenario::Convergence => include_str!("../../configs/convergence.toml"),
        Scenario::Accretivity => include_str!("../../configs/accretivity.toml"),
    };
    let mut cfg = parse_config(text)?;
    if quick {
        let overrides: &[&str] = match scenario {
            Scenario::Evolve => &["domain.n=32", "scheme.steps=50"],
            Scenario::Extinction => &["domain.n=32", "scheme.horizon=1.0", "scheme.steps=400"],
            Scenario::Blowup => &["domain.n=32"],
            Scenario::Stabilization => &["domain.n=32", "scheme.steps=100"],
            Scenario::Contraction | Scenario::Comparison => &["checks.pairs=3"],
            Scenario::Convergence => &["domain.n=32", "checks.refinements=[125, 250, 500, 1000]", "scheme.steps=125"],
            Scenario::Accretivity => &["checks.trials=200"],
        };
        for o in overrides {
            cfg = cfg.with_override_str(o)?;
        }
    }
    Ok(cfg)
}
