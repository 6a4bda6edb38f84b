//! One runner per scenario. Each produces a [`ScenarioOutcome`]: the primary trajectory
//! (if the scenario evolves one), the declared checks, and scenario-specific details.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{ExperimentConfig, Scenario};
use crate::diagnostics::{self, Check, DiagnosticsReport};
use crate::elliptic;
use crate::error::{Error, Result};
use crate::grid::{lp_norm, Field, Grid};
use crate::nonlinearities::smooth_bump;
use crate::operators::{self, ModelParams};
use crate::time_stepper::{evolution_exponent, run_trajectory, RunStatus, SchemeConfig, Trajectory};

/// Exit codes of the command-line front end.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const IO: i32 = 1;
    pub const CHECK_FAILURE: i32 = 2;
    pub const SOLVER_FAILURE: i32 = 3;
    pub const CONFIG_ERROR: i32 = 4;
}

pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_solver_failure() {
        exit::SOLVER_FAILURE
    } else if matches!(err, Error::Io { .. }) {
        exit::IO
    } else {
        exit::CONFIG_ERROR
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub trajectory: Option<Trajectory>,
    pub report: DiagnosticsReport,
    /// Scenario-specific scalars and small arrays for `summary.json`.
    pub details: BTreeMap<String, Value>,
    /// Runs that ended in [`RunStatus::Failed`], as `label: reason`.
    pub solver_failures: Vec<String>,
    /// The `u`-independent source of a stabilization run, for stationary residuals.
    pub stationary_source: Option<Field>,
    pub warnings: Vec<String>,
}

impl ScenarioOutcome {
    fn new(scenario: Scenario, warnings: Vec<String>) -> Self {
        ScenarioOutcome {
            scenario,
            trajectory: None,
            report: DiagnosticsReport::default(),
            details: BTreeMap::new(),
            solver_failures: Vec::new(),
            stationary_source: None,
            warnings,
        }
    }

    pub fn status(&self) -> Option<&RunStatus> {
        self.trajectory.as_ref().map(|t| &t.status)
    }

    pub fn pass(&self) -> bool {
        self.solver_failures.is_empty() && self.report.all_pass()
    }

    pub fn exit_code(&self) -> i32 {
        if !self.solver_failures.is_empty() {
            exit::SOLVER_FAILURE
        } else if !self.report.all_pass() {
            exit::CHECK_FAILURE
        } else {
            exit::PASS
        }
    }

    fn detail(&mut self, key: &str, value: impl Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    fn run(&mut self, label: &str, u0: &Field, params: &ModelParams, scheme: &SchemeConfig) -> Result<Trajectory> {
        let traj = run_trajectory(u0, params, scheme)?;
        if let RunStatus::Failed { step, reason } = &traj.status {
            self.solver_failures.push(format!("{label}: step {step}: {reason}"));
        }
        Ok(traj)
    }
}

/// Runs the configured scenario. Errors are configuration or solver errors that prevent
/// the scenario from producing any result.
pub fn run_scenario(config: &ExperimentConfig) -> Result<ScenarioOutcome> {
    let params = config.model_params()?;
    let scheme = config.scheme_config();
    let u0 = config.initial_field(&params)?;
    let mut out = ScenarioOutcome::new(config.scenario, config.regime_warnings());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.scenario {
        Scenario::Evolve => evolve(&mut out, config, &params, &scheme, &u0)?,
        Scenario::Extinction => extinction(&mut out, config, &params, &scheme, &u0)?,
        Scenario::Blowup => blowup(&mut out, config, &params, &scheme, &u0)?,
        Scenario::Stabilization => stabilization(&mut out, config, &params, &scheme, &u0)?,
        Scenario::Contraction => contraction(&mut out, config, &params, &scheme, &mut rng)?,
        Scenario::Comparison => comparison(&mut out, config, &params, &scheme, &mut rng)?,
        Scenario::Convergence => convergence(&mut out, config, &params, &scheme, &u0)?,
        Scenario::Accretivity => accretivity(&mut out, config, &params)?,
    }
    if let Some(traj) = &out.trajectory {
        let (extinct, blown) = match traj.status {
            RunStatus::Extinct { time } => (Some(time), None),
            RunStatus::BlownUp { time } => (None, Some(time)),
            _ => (None, None),
        };
        out.detail("extinct_at", extinct);
        out.detail("blown_up_at", blown);
    }
    Ok(out)
}

fn evolve(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    u0: &Field,
) -> Result<()> {
    let tol = config.checks.tolerance;
    let traj = out.run("evolve", u0, params, scheme)?;
    out.report.push(Check::new("linf_bound", traj.linf_bound_excess().max(0.0), tol));
    out.report.merge(diagnostics::check_energy_dissipation(&traj)?);
    let cert = diagnostics::certify_eps_approximation(&traj)?;
    let h = params.grid.h();
    let rate_scale = (1..traj.levels.len())
        .map(|n| {
            let (b, bp) = (traj.beta_levels[n].values(), traj.beta_levels[n - 1].values());
            h * b.iter().zip(bp).map(|(x, y)| (x - y).abs()).sum::<f64>() / traj.dt_history[n - 1]
        })
        .fold(0.0, f64::max);
    out.report.push(Check::new(
        "step_residual",
        cert.max_step_residual(),
        config.checks.residual_tolerance * (1.0 + rate_scale),
    ));
    out.report.series.insert("step_residual".into(), cert.step_residuals.clone());
    out.detail("epsilon_time", cert.epsilon_time);
    out.detail("epsilon_source", cert.epsilon_source);
    out.detail("a_priori_energy", traj.a_priori_energy());
    out.trajectory = Some(traj);
    Ok(())
}

fn extinction_time(traj: &Trajectory) -> f64 {
    match traj.status {
        RunStatus::Extinct { time } => time,
        _ => f64::INFINITY,
    }
}

fn extinction(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    u0: &Field,
) -> Result<()> {
    let traj = out.run("extinction", u0, params, scheme)?;
    let rep = diagnostics::detect_extinction(&traj, config.checks.k)?;
    let half = out.run("extinction (half data)", &u0.scale(0.5), params, scheme)?;
    let (t_full, t_half) = (extinction_time(&traj), extinction_time(&half));
    let z0 = rep.z_series.first().copied().unwrap_or(0.0);
    out.report.push(Check::new("extinct_before_horizon", t_full, scheme.horizon));
    out.report.push(Check::new(
        "z_nonincreasing",
        rep.max_increment_after_first.max(0.0),
        1e-12 * z0.max(f64::MIN_POSITIVE),
    ));
    out.report.push(Check::new(
        "half_data_not_later",
        if t_half.is_finite() && t_full.is_finite() { t_half - t_full } else { f64::INFINITY },
        0.0,
    ));
    out.report.series.insert("z".into(), rep.z_series.clone());
    out.detail("k", rep.k);
    out.detail("alpha", rep.alpha);
    out.detail("half_data_extinct_at", t_half.is_finite().then_some(t_half));
    out.detail("measured_slope", rep.measured_slope);
    out.trajectory = Some(traj);
    Ok(())
}

fn blowup(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    u0: &Field,
) -> Result<()> {
    let mut base = u0.clone();
    if config.checks.scale_to_negative_energy {
        let mut doublings = 0;
        while operators::energy_e(&base, params)? >= 0.0 {
            if doublings == 200 || base.max_abs() == 0.0 {
                return Err(Error::InvalidParameter("no multiple of the initial data has negative energy".into()));
            }
            base = base.scale(2.0);
            doublings += 1;
        }
        out.detail("amplitude_doublings", doublings);
    }
    let gamma = evolution_exponent(&params.beta);
    let mut times = Vec::new();
    let mut norms = Vec::new();
    let mut not_blown = 0;
    let mut first = None;
    for (k, &mult) in config.checks.amplitudes.iter().enumerate() {
        let data = base.scale(mult);
        let traj = out.run(&format!("blowup x{mult}"), &data, params, scheme)?;
        let rep = diagnostics::detect_blowup(&traj)?;
        let final_norm = traj.evolution_norms().last().copied().unwrap_or(0.0);
        match traj.status {
            RunStatus::BlownUp { time } if final_norm > traj.blowup_threshold => times.push(time),
            _ => {
                not_blown += 1;
                times.push(f64::NAN);
            }
        }
        norms.push(lp_norm(&data, gamma)?);
        if k == 0 {
            out.report.push(Check::new("energy_e0_negative", rep.energy_e0, 0.0));
            out.detail("energy_e0", rep.energy_e0);
            out.detail("c_meas", rep.c_meas);
            out.detail("measured_growth_exponent", rep.measured_exponent);
            out.detail("scaling_exponent", rep.scaling_exponent);
            out.report.series.insert("w".into(), rep.w_series.clone());
            first = Some(traj);
        }
    }
    out.report.push(Check::new("blown_up", not_blown as f64, 0.0));
    let worst_increase = times
        .windows(2)
        .map(|w| if w[0].is_nan() || w[1].is_nan() { f64::INFINITY } else { w[1] - w[0] })
        .fold(f64::NEG_INFINITY, f64::max);
    out.report.push(Check::new("blowup_times_decreasing", worst_increase, 0.0));
    let last = times.len() - 1;
    let slope = (times[last] / times[0]).ln() / (norms[last] / norms[0]).ln();
    out.detail("blowup_times", &times);
    out.detail("data_norms", &norms);
    out.detail("measured_time_exponent", slope);
    out.trajectory = first;
    Ok(())
}

fn stabilization(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    u0: &Field,
) -> Result<()> {
    let c = &config.checks;
    let source = Field::from_fn(params.grid, |x| params.source.eval(0.0, x, 0.0));
    let traj = out.run("stabilization", u0, params, scheme)?;
    if u0.max_abs() == 0.0 {
        let mut worst = 0.0f64;
        for w in traj.levels.windows(2) {
            for (a, b) in w[0].values().iter().zip(w[1].values()) {
                worst = worst.max(a - b);
            }
        }
        out.report.push(Check::new("monotone_levels", worst, c.tolerance));
    }
    let (stat, _) = elliptic::solve_stationary(params, &source, &config.solver)?;
    let res_traj = diagnostics::stationary_residual(traj.last(), params, &source)?;
    let res_stat = diagnostics::stationary_residual(&stat, params, &source)?;
    let dist = lp_norm(&traj.last().zip_map(&stat, |a, b| a - b)?, 1.0)?;
    out.report
        .push(Check::new("stationary_residual", res_traj, c.residual_ratio * res_stat));
    out.report.push(Check::new("stationary_distance", dist, c.stationary_distance));
    out.detail("stationary_solution", stat.values());
    out.detail("stationary_solver_residual", res_stat);
    out.stationary_source = Some(source);
    out.trajectory = Some(traj);
    Ok(())
}

/// Sum of two bumps with random signed amplitudes.
fn random_bumps(grid: Grid, rng: &mut ChaCha8Rng, amplitude: f64, signed: bool) -> Field {
    let lo = if signed { -amplitude } else { 0.0 };
    let (a1, a2) = (rng.gen_range(lo..=amplitude), rng.gen_range(lo..=amplitude));
    let (c1, c2) = (rng.gen_range(0.25..0.45), rng.gen_range(0.55..0.75));
    let (w1, w2) = (rng.gen_range(0.15..0.25), rng.gen_range(0.15..0.25));
    let len = grid.b() - grid.a();
    Field::from_fn(grid, |x| {
        let y = (x - grid.a()) / len;
        smooth_bump(y, a1, c1, w1) + smooth_bump(y, a2, c2, w2)
    })
}

fn contraction(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let c = &config.checks;
    let convective = !params.flux.is_zero();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_defect = 0.0f64;
    for k in 0..c.pairs {
        let ua = random_bumps(params.grid, rng, c.data_amplitude, true);
        let ub = random_bumps(params.grid, rng, c.data_amplitude, true);
        let a = out.run(&format!("pair {k} a"), &ua, params, scheme)?;
        let b = out.run(&format!("pair {k} b"), &ub, params, scheme)?;
        if !(matches!(a.status, RunStatus::Failed { .. }) || matches!(b.status, RunStatus::Failed { .. })) {
            let rep = diagnostics::check_contraction(&a, &b, 0.0)?;
            let defect = rep.check("convection_defect").map_or(0.0, |x| x.measured);
            let excess = rep.check("contraction").map_or(f64::INFINITY, |x| x.measured);
            // the convection defect is the only admissible source of excess
            worst_excess = worst_excess.max(excess - defect);
            worst_defect = worst_defect.max(defect);
            if k == 0 {
                out.report.series.extend(rep.series);
            }
        }
        if k == 0 {
            out.trajectory = Some(a);
        }
    }
    out.report.push(Check::new("contraction", worst_excess, c.tolerance));
    if convective {
        out.report
            .push(Check::new("convection_defect", worst_defect, c.c_h * params.grid.h()));
    }
    out.detail("pairs", c.pairs);
    Ok(())
}

fn comparison(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let c = &config.checks;
    let mut worst = f64::NEG_INFINITY;
    let mut bound = c.tolerance;
    for k in 0..c.pairs {
        let ua = random_bumps(params.grid, rng, c.data_amplitude, true);
        let lift = random_bumps(params.grid, rng, c.data_amplitude, false);
        let ub = ua.zip_map(&lift, |a, b| a + b)?;
        let a = out.run(&format!("pair {k} lower"), &ua, params, scheme)?;
        let b = out.run(&format!("pair {k} upper"), &ub, params, scheme)?;
        if !(matches!(a.status, RunStatus::Failed { .. }) || matches!(b.status, RunStatus::Failed { .. })) {
            let rep = diagnostics::check_comparison(&a, &b, c.c_h)?;
            if let Some(check) = rep.check("comparison") {
                worst = worst.max(check.measured);
                bound = check.bound.max(c.tolerance);
            }
            if k == 0 {
                out.report.series.extend(rep.series);
            }
        }
        if k == 0 {
            out.trajectory = Some(a);
        }
    }
    out.report.push(Check::new("comparison", worst, bound));
    out.detail("pairs", c.pairs);
    Ok(())
}

fn convergence(
    out: &mut ScenarioOutcome,
    config: &ExperimentConfig,
    params: &ModelParams,
    scheme: &SchemeConfig,
    u0: &Field,
) -> Result<()> {
    let c = &config.checks;
    let mut runs = Vec::new();
    for &steps in &c.refinements {
        let mut s = scheme.clone();
        s.steps = steps;
        runs.push(out.run(&format!("N = {steps}"), u0, params, &s)?);
    }
    let mut d = Vec::new();
    for w in runs.windows(2) {
        d.push(diagnostics::cauchy_difference(&w[0], &w[1])?);
    }
    let worst_ratio = d
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(f64::NEG_INFINITY, |m, r| if r.is_nan() { f64::INFINITY } else { m.max(r) });
    out.report.push(Check::new("cauchy_ratio", worst_ratio, c.ratio_limit));
    out.report.series.insert("cauchy_differences".into(), d.clone());
    out.detail("refinements", &c.refinements);
    out.detail("cauchy_differences", &d);
    out.trajectory = runs.pop();
    Ok(())
}

fn accretivity(out: &mut ScenarioOutcome, config: &ExperimentConfig, params: &ModelParams) -> Result<()> {
    let c = &config.checks;
    let n = params.grid.len();
    let rep = diagnostics::sample_accretivity(params, c.trials, n, config.seed, c.c_h)?;
    out.detail("min_sum", rep.min_sum);
    if !params.flux.is_zero() {
        let fine = diagnostics::sample_accretivity(params, c.trials, 2 * n, config.seed, c.c_h)?;
        out.report.push(Check::new(
            "convection_violation_decreasing",
            fine.convection_violation - rep.convection_violation,
            0.0,
        ));
        out.detail(
            "convection_violation",
            json!({ "n": [n, 2 * n], "violation": [rep.convection_violation, fine.convection_violation] }),
        );
    }
    out.report.merge(rep.report);
    out.detail("trials", c.trials);
    Ok(())
}
