//! Files written for one run: `trajectory.csv`, `series.csv`, `summary.json` and
//! `config.echo.toml`; and `sweep_summary.csv` for a sweep.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::config::{sweep_label, ExperimentConfig};
use super::scenarios::{exit_code_for, run_scenario, ScenarioOutcome};
use crate::diagnostics::{self, Check};
use crate::error::{Error, Result};
use crate::operators;
use crate::time_stepper::{RunStatus, Trajectory};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "DNP_OUTPUT_ROOT";

/// `output_dir`, placed under `$DNP_OUTPUT_ROOT` when that is set and the path is relative.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub pass: bool,
    pub exit_code: i32,
    pub status: Option<RunStatus>,
    pub checks: Vec<Check>,
    pub solver_failures: Vec<String>,
    pub warnings: Vec<String>,
    pub details: BTreeMap<String, Value>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl Summary {
    pub fn from_outcome(outcome: &ScenarioOutcome, config: &ExperimentConfig) -> Self {
        Summary {
            scenario: config.scenario.name().to_string(),
            seed: config.seed,
            pass: outcome.pass(),
            exit_code: outcome.exit_code(),
            status: outcome.status().cloned(),
            checks: outcome.report.checks.clone(),
            solver_failures: outcome.solver_failures.clone(),
            warnings: outcome.warnings.clone(),
            details: outcome.details.clone(),
            series: outcome.report.series.clone(),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Levels `0, stride, 2 stride, ...` and always the last one.
fn thinned(len: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).step_by(stride.max(1)).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

fn write_trajectory(path: &Path, traj: &Trajectory, stride: usize) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(traj.params.grid.nodes().iter().map(|x| x.to_string()));
    let rows: Vec<Vec<String>> = thinned(traj.levels.len(), stride)
        .into_iter()
        .map(|n| {
            let mut row = vec![traj.times[n].to_string()];
            row.extend(traj.levels[n].values().iter().map(|v| v.to_string()));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

fn write_series(path: &Path, traj: &Trajectory, outcome: &ScenarioOutcome) -> Result<()> {
    let params = &traj.params;
    let kernel = params.kernel();
    let norms = traj.evolution_norms();
    let header: Vec<String> = ["t", "linf", "norm_evolution", "energy_j", "energy_e", "stationary_residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::with_capacity(traj.levels.len());
    for (n, u) in traj.levels.iter().enumerate() {
        let e = operators::energy_e(u, params).ok();
        let res = match &outcome.stationary_source {
            Some(src) => Some(diagnostics::stationary_residual(u, params, src)?),
            None => None,
        };
        rows.push(vec![
            traj.times[n].to_string(),
            u.max_abs().to_string(),
            norms[n].to_string(),
            operators::energy_j_with(u, params, &kernel).to_string(),
            opt(e),
            opt(res),
        ]);
    }
    write_csv(path, &header, &rows)
}

/// Writes every output of one run into `dir`; returns the summary.
pub fn emit_outputs(outcome: &ScenarioOutcome, config: &ExperimentConfig, dir: &Path) -> Result<Summary> {
    create_dir(dir)?;
    if let Some(traj) = &outcome.trajectory {
        write_trajectory(&dir.join("trajectory.csv"), traj, config.scheme.save_stride)?;
        write_series(&dir.join("series.csv"), traj, outcome)?;
    }
    let summary = Summary::from_outcome(outcome, config);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&dir.join("summary.json"), &(json + "\n"))?;
    write_text(&dir.join("config.echo.toml"), &config.to_toml()?)?;
    Ok(summary)
}

/// Result of one configured run, after outputs are written.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub output_dir: PathBuf,
    pub exit_code: i32,
    /// One `name PASS|FAIL measured bound` line per check, or the error.
    pub lines: Vec<String>,
    pub summary: Option<Summary>,
}

/// Runs one (non-sweep) config and writes its outputs.
pub fn execute(config: &ExperimentConfig) -> RunRecord {
    let dir = resolve_output_dir(&config.output_dir);
    let result = run_scenario(config).and_then(|outcome| emit_outputs(&outcome, config, &dir));
    match result {
        Ok(summary) => {
            let mut lines: Vec<String> = summary
                .checks
                .iter()
                .map(|c| {
                    format!(
                        "{} {} measured {:.6e} bound {:.6e}",
                        c.name,
                        if c.pass { "PASS" } else { "FAIL" },
                        c.measured,
                        c.bound
                    )
                })
                .collect();
            lines.extend(summary.solver_failures.iter().map(|f| format!("solver FAIL {f}")));
            RunRecord {
                output_dir: dir,
                exit_code: summary.exit_code,
                lines,
                summary: Some(summary),
            }
        }
        Err(e) => RunRecord {
            output_dir: dir,
            exit_code: exit_code_for(&e),
            lines: vec![format!("error: {e}")],
            summary: None,
        },
    }
}

/// Expands the sweep, runs every point in a work pool, and writes `sweep_summary.csv`
/// into the sweep's own output directory. Records come back in sweep order.
pub fn execute_sweep(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let points = config.expand_sweep()?;
    let records: Vec<RunRecord> = points.par_iter().map(execute).collect();
    if let Some(sweep) = &config.sweep {
        let dir = resolve_output_dir(&config.output_dir);
        create_dir(&dir)?;
        let header: Vec<String> = ["key", "value", "directory", "exit_code", "pass", "status", "failed_checks"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let rows: Vec<Vec<String>> = sweep
            .values
            .iter()
            .zip(&records)
            .map(|(v, r)| {
                let (pass, status, failed) = match &r.summary {
                    Some(s) => (
                        s.pass.to_string(),
                        s.status.as_ref().map_or_else(String::new, status_name),
                        s.checks
                            .iter()
                            .filter(|c| !c.pass)
                            .map(|c| c.name.as_str())
                            .collect::<Vec<_>>()
                            .join(";"),
                    ),
                    None => ("false".into(), "error".into(), String::new()),
                };
                vec![
                    sweep.key.clone(),
                    match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    },
                    sweep_label(&sweep.key, v),
                    r.exit_code.to_string(),
                    pass,
                    status,
                    failed,
                ]
            })
            .collect();
        write_csv(&dir.join("sweep_summary.csv"), &header, &rows)?;
    }
    Ok(records)
}

fn status_name(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::Extinct { time } => format!("extinct({time})"),
        RunStatus::BlownUp { time } => format!("blown_up({time})"),
        RunStatus::Failed { step, .. } => format!("failed(step {step})"),
    }
}
