//! Implicit Euler in `beta(u)` with an explicitly averaged source:
//!
//! ```text
//! (beta(u^n) - beta(u^{n-1})) / dt + A_mu u^n = g^n + Div f(u^n),
//! g^n = mean over [t_{n-1}, t_n] of g_R(t, x, u^{n-1}).
//! ```
//!
//! Every step is one resolvent solve with `lambda = dt` and `rhs = g^n + beta(u^{n-1}) / dt`.

use serde::{Deserialize, Serialize};

use crate::elliptic::{self, EllipticProblem, SolveReport, SolverSettings};
use crate::error::{Error, Result};
use crate::grid::{self, Field};
use crate::nonlinearities::{BetaSpec, SourceSpec};
use crate::operators::{self, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRadius {
    /// Closed-form radius from the a-priori maximum bound, verified after the run.
    Auto,
    /// No truncation of `g`.
    None,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeConfig {
    /// Final time `T`.
    pub horizon: f64,
    /// Number of uniform steps `N`, so `dt = T / N`.
    pub steps: usize,
    pub radius: TruncationRadius,
    /// Midpoint nodes for averaging an explicitly time-dependent source.
    pub quad_points: usize,
    /// Halve `dt` on solver failure or fast growth.
    pub adaptive: bool,
    /// Blow-up is declared once `||u||_{1+1/m}` exceeds this; default `1e6 (1 + ||u0||_{1+1/m})`.
    pub blowup_threshold: Option<f64>,
    /// Extinction is declared once `||u||_inf` falls below this.
    pub extinction_threshold: f64,
    /// Stop the run at extinction.
    pub stop_at_extinction: bool,
    /// Largest accepted per-step growth of `||u||_{1+1/m}` in adaptive mode.
    pub growth_factor: f64,
    /// Halvings allowed per step before the run is declared failed.
    pub max_halvings: usize,
    /// Evaluate `g` at `u^n` (fixed point inside the step) instead of `u^{n-1}`.
    pub implicit_source: bool,
    pub solver: SolverSettings,
}

impl SchemeConfig {
    pub fn new(horizon: f64, steps: usize) -> Self {
        SchemeConfig {
            horizon,
            steps,
            radius: TruncationRadius::Auto,
            quad_points: 4,
            adaptive: false,
            blowup_threshold: None,
            extinction_threshold: 1e-10,
            stop_at_extinction: false,
            growth_factor: 1.5,
            max_halvings: 40,
            implicit_source: false,
            solver: SolverSettings::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.steps == 0 || self.quad_points == 0 {
            return Err(Error::InvalidParameter("steps and quad_points must be positive".into()));
        }
        if let TruncationRadius::Fixed(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::InvalidParameter(format!("truncation radius must be positive, got {r}")));
            }
        }
        if !(self.extinction_threshold > 0.0) || self.blowup_threshold.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::InvalidParameter("thresholds must be positive".into()));
        }
        if !(self.growth_factor > 1.0) {
            return Err(Error::InvalidParameter("growth_factor must exceed 1".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Extinct { time: f64 },
    BlownUp { time: f64 },
    Failed { step: usize, reason: String },
}

/// Record of a run: levels `u^0..u^N` on the time grid `t_0 < ... < t_N`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: ModelParams,
    pub times: Vec<f64>,
    pub levels: Vec<Field>,
    pub beta_levels: Vec<Field>,
    /// `g^n` for `n = 1..N`, stored at index `n - 1`.
    pub source_levels: Vec<Field>,
    pub reports: Vec<SolveReport>,
    /// Step sizes `t_n - t_{n-1}`.
    pub dt_history: Vec<f64>,
    pub status: RunStatus,
    /// Truncation radius of `g`, if any.
    pub radius: Option<f64>,
    pub blowup_threshold: f64,
    pub extinction_threshold: f64,
}

/// Values of the three time interpolants at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolants {
    pub u_tilde: Field,
    pub beta_tilde: Field,
    pub u_piecewise: Field,
}

/// `1 + 1/m`, the natural exponent of the evolution; 2 for tabulated `beta`.
pub fn evolution_exponent(beta: &BetaSpec) -> f64 {
    beta.m().map_or(2.0, |m| 1.0 + 1.0 / m)
}

fn evolution_norm(u: &Field, beta: &BetaSpec) -> f64 {
    grid::lp_norm_unchecked(u.values(), u.grid().h(), evolution_exponent(beta))
}

impl Trajectory {
    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn last(&self) -> &Field {
        self.levels.last().unwrap()
    }

    /// `u_tilde`, `beta_tilde` (piecewise linear) and `u_dt` (piecewise constant,
    /// `u^n` on `(t_{n-1}, t_n]`) at time `t`.
    pub fn interpolants(&self, t: f64) -> Result<Interpolants> {
        let last = self.final_time();
        if !(t >= 0.0 && t <= last) {
            return Err(Error::OutOfRange(format!("time {t} (trajectory covers [0, {last}])")));
        }
        // first n with t <= t_n
        let n = self.times.partition_point(|&tn| tn < t).min(self.steps());
        if n == 0 || t == self.times[n] {
            return Ok(Interpolants {
                u_tilde: self.levels[n].clone(),
                beta_tilde: self.beta_levels[n].clone(),
                u_piecewise: self.levels[n].clone(),
            });
        }
        let s = (t - self.times[n - 1]) / (self.times[n] - self.times[n - 1]);
        let lerp = |a: &Field, b: &Field| a.zip_map(b, |x, y| x + s * (y - x)).expect("same grid");
        Ok(Interpolants {
            u_tilde: lerp(&self.levels[n - 1], &self.levels[n]),
            beta_tilde: lerp(&self.beta_levels[n - 1], &self.beta_levels[n]),
            u_piecewise: self.levels[n].clone(),
        })
    }

    /// Right-hand side of the discrete maximum bound at each level:
    /// `||beta(u^0)||_inf + sum_{k <= n} dt_k ||g^k||_inf`.
    pub fn linf_bound_series(&self) -> Vec<f64> {
        let mut acc = self.beta_levels[0].max_abs();
        let mut out = vec![acc];
        for (g, dt) in self.source_levels.iter().zip(&self.dt_history) {
            acc += dt * g.max_abs();
            out.push(acc);
        }
        out
    }

    /// Largest excess of `||beta(u^n)||_inf` over [`Trajectory::linf_bound_series`].
    pub fn linf_bound_excess(&self) -> f64 {
        self.beta_levels
            .iter()
            .zip(self.linf_bound_series())
            .map(|(b, bound)| b.max_abs() - bound)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum_n dt ||(u^n - u^{n-1}) / dt||_2^2 + max_n J(u^n)`.
    pub fn a_priori_energy(&self) -> f64 {
        let h = self.params.grid.h();
        let mut kinetic = 0.0;
        for (n, dt) in self.dt_history.iter().enumerate() {
            let d: f64 = self.levels[n + 1]
                .values()
                .iter()
                .zip(self.levels[n].values())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            kinetic += h * d / dt;
        }
        let kernel = self.params.kernel();
        let jmax = self
            .levels
            .iter()
            .map(|u| operators::energy_j_with(u, &self.params, &kernel))
            .fold(0.0, f64::max);
        kinetic + jmax
    }

    /// `h sum (Div f(u^n))_i u^n_i` for every level.
    pub fn convection_pairings(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|u| operators::convection_pairing(u, &self.params.flux))
            .collect()
    }

    /// `||u^n||_{1+1/m}` for every level.
    pub fn evolution_norms(&self) -> Vec<f64> {
        self.levels
            .iter()
            .map(|u| evolution_norm(u, &self.params.beta))
            .collect()
    }
}

/// `g^n`: the time average of `g_R(., x, u_prev)` over `interval`.
///
/// Autonomous sources are evaluated once; otherwise a composite midpoint rule with
/// `quad_points` nodes is used, which is exact for sources affine in `t`.
pub fn average_source(
    source: &SourceSpec,
    u_prev: &Field,
    interval: (f64, f64),
    quad_points: usize,
    radius: Option<f64>,
) -> Result<Field> {
    let (t0, t1) = interval;
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!(
            "averaging interval must be nondegenerate, got [{t0}, {t1}]"
        )));
    }
    let g = match radius {
        Some(r) => source.truncate(r)?,
        None => source.clone(),
    };
    let grid = *u_prev.grid();
    let nodes = grid.nodes();
    let (taus, weight): (Vec<f64>, f64) = if g.is_autonomous() {
        (vec![t0], 1.0)
    } else {
        let q = quad_points.max(1);
        let dt = (t1 - t0) / q as f64;
        ((0..q).map(|k| t0 + (k as f64 + 0.5) * dt).collect(), 1.0 / q as f64)
    };
    let vals = nodes
        .iter()
        .zip(u_prev.values())
        .map(|(&x, &u)| weight * taus.iter().map(|&t| g.eval(t, x, u)).sum::<f64>())
        .collect();
    Ok(Field::from_raw(grid, vals))
}

/// One implicit step from `u_prev` at time `t_prev`; returns `u^n`, the solve report and `g^n`.
pub fn step(
    u_prev: &Field,
    t_prev: f64,
    dt: f64,
    params: &ModelParams,
    scheme: &SchemeConfig,
    radius: Option<f64>,
) -> Result<(Field, SolveReport, Field)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    params.grid.check_same(u_prev.grid())?;
    let beta_prev = u_prev.map(|x| params.beta.eval(x));
    let interval = (t_prev, t_prev + dt);
    let mut g = average_source(&params.source, u_prev, interval, scheme.quad_points, radius)?;
    let assemble = |g: &Field| g.zip_map(&beta_prev, |a, b| a + b / dt).expect("same grid");
    let problem = EllipticProblem::resolvent(params.clone(), dt, assemble(&g))?.with_start(u_prev.clone())?;
    let (mut u, mut report) = elliptic::solve_resolvent(&problem, &scheme.solver)?;
    if scheme.implicit_source && params.source.depends_on_u() {
        let settings = &scheme.solver;
        let mut converged = false;
        for _ in 0..settings.max_outer {
            let g_new = average_source(&params.source, &u, interval, scheme.quad_points, radius)?;
            let problem = EllipticProblem::resolvent(params.clone(), dt, assemble(&g_new))?.with_start(u.clone())?;
            let (u_new, rep) = elliptic::solve_resolvent(&problem, settings)?;
            let change = u_new.zip_map(&u, |a, b| a - b)?.max_abs();
            u = u_new;
            report = rep;
            if change <= settings.fp_tol * (1.0 + u.max_abs()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::OuterNonconvergence {
                history: vec![],
                last_iterate: u.into_values(),
            });
        }
        g = average_source(&params.source, &u, interval, scheme.quad_points, radius)?;
    }
    Ok((u, report, g))
}

/// Smallest radius found with `F(R) <= R`, where
/// `F(R) = beta^{-1}(||beta(u0)||_inf + T c_g (1 + R^q_g))` bounds `||u||_inf` for the scheme
/// truncated at `R`. Iterates `R <- F(R)` from `||u0||_inf + 1`, testing `1.01 R` after each pass.
///
/// `Ok(None)` when `g` does not depend on `u` (truncation is then the identity).
pub fn auto_radius(u0: &Field, params: &ModelParams, horizon: f64) -> Result<Option<f64>> {
    if !params.source.depends_on_u() {
        return Ok(None);
    }
    let (c_g, q_g) = params.source.growth_constants(horizon);
    let b0 = u0.values().iter().fold(0.0f64, |m, &x| m.max(params.beta.eval(x).abs()));
    let map = |r: f64| params.beta.inv(b0 + horizon * c_g * (1.0 + r.powf(q_g)));
    let mut r = u0.max_abs() + 1.0;
    for _ in 0..200 {
        if map(r) <= r {
            return Ok(Some(r));
        }
        let candidate = 1.01 * map(r);
        if !(candidate < 1e100) {
            break;
        }
        if map(candidate) <= candidate {
            return Ok(Some(candidate));
        }
        r = map(r);
    }
    Err(Error::InvalidParameter(format!(
        "automatic truncation radius does not close (no R with F(R) <= R up to {r:.3e}); set scheme.R explicitly or shorten the horizon"
    )))
}

/// Runs the scheme from `u0` up to the horizon (or until extinction, blow-up or failure).
pub fn run_trajectory(u0: &Field, params: &ModelParams, scheme: &SchemeConfig) -> Result<Trajectory> {
    params.validate()?;
    scheme.validate()?;
    params.grid.check_same(u0.grid())?;
    let radius = match scheme.radius {
        TruncationRadius::Auto => auto_radius(u0, params, scheme.horizon)?,
        TruncationRadius::None => None,
        TruncationRadius::Fixed(r) => Some(r),
    };
    let norm0 = evolution_norm(u0, &params.beta);
    let blowup_threshold = scheme.blowup_threshold.unwrap_or(1e6 * (1.0 + norm0));
    let nonzero = u0.max_abs() > 0.0;

    let mut traj = Trajectory {
        params: params.clone(),
        times: vec![0.0],
        levels: vec![u0.clone()],
        beta_levels: vec![u0.map(|x| params.beta.eval(x))],
        source_levels: Vec::new(),
        reports: Vec::new(),
        dt_history: Vec::new(),
        status: RunStatus::Completed,
        radius,
        blowup_threshold,
        extinction_threshold: scheme.extinction_threshold,
    };

    let horizon = scheme.horizon;
    let end_slack = 1e-12 * horizon;
    let mut dt = scheme.dt();
    let mut t = 0.0;
    let mut n = 0;
    while t < horizon - end_slack {
        let u_prev = traj.levels.last().unwrap().clone();
        let prev_norm = evolution_norm(&u_prev, &params.beta);
        let mut halvings = 0;
        let accepted = loop {
            let this_dt = dt.min(horizon - t);
            let attempt = step(&u_prev, t, this_dt, params, scheme, radius);
            let ok = match &attempt {
                Ok((u, _, _)) => {
                    !scheme.adaptive
                        || prev_norm == 0.0
                        || evolution_norm(u, &params.beta) <= scheme.growth_factor * prev_norm
                }
                Err(_) => false,
            };
            if ok {
                break Ok((attempt.unwrap(), this_dt));
            }
            if !scheme.adaptive || halvings >= scheme.max_halvings {
                let reason = match attempt {
                    Err(e) => Error::StepFailure {
                        step: n + 1,
                        source: Box::new(e),
                    }
                    .to_string(),
                    Ok(_) => format!("growth above factor {} after {halvings} halvings", scheme.growth_factor),
                };
                break Err(reason);
            }
            dt *= 0.5;
            halvings += 1;
        };
        let ((u, report, g), this_dt) = match accepted {
            Ok(v) => v,
            Err(reason) => {
                traj.status = RunStatus::Failed { step: n + 1, reason };
                return Ok(traj);
            }
        };
        n += 1;
        t = if horizon - (t + this_dt) <= end_slack { horizon } else { t + this_dt };
        traj.beta_levels.push(u.map(|x| params.beta.eval(x)));
        traj.times.push(t);
        traj.source_levels.push(g);
        traj.reports.push(report);
        traj.dt_history.push(this_dt);
        let norm = evolution_norm(&u, &params.beta);
        let linf = u.max_abs();
        traj.levels.push(u);
        if norm > blowup_threshold || !norm.is_finite() {
            traj.status = RunStatus::BlownUp { time: t };
            return Ok(traj);
        }
        if nonzero && linf < scheme.extinction_threshold && matches!(traj.status, RunStatus::Completed) {
            traj.status = RunStatus::Extinct { time: t };
            if scheme.stop_at_extinction {
                return Ok(traj);
            }
        }
    }

    if scheme.radius == TruncationRadius::Auto {
        if let Some(r) = radius {
            let max_abs = traj.levels.iter().fold(0.0f64, |m, u| m.max(u.max_abs()));
            if max_abs > r {
                return Err(Error::TruncationViolated { radius: r, max_abs });
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::nonlinearities::{smooth_bump, FluxSpec, SourceProfile};

    fn params(m: f64, mu: f64, source: SourceSpec, n: usize) -> ModelParams {
        ModelParams::new(
            3.0,
            1.5,
            0.5,
            mu,
            BetaSpec::power(m).unwrap(),
            FluxSpec::Zero,
            source,
            Grid::new(0.0, 1.0, n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn average_source_examples() {
        let g = Grid::new(0.0, 1.0, 2).unwrap();
        let u = Field::new(g, vec![1.0, 2.0]).unwrap();
        let cube = SourceSpec::power(3.0).unwrap();
        let out = average_source(&cube, &u, (0.0, 0.1), 4, Some(2.0)).unwrap();
        assert_eq!(out.values(), &[1.0, 8.0]);
        let z = average_source(&SourceSpec::Zero, &u, (0.0, 0.1), 4, None).unwrap();
        assert_eq!(z.values(), &[0.0, 0.0]);
        let lin = SourceSpec::TimeLinear { offset: 0.0, slope: 1.0 };
        let a = average_source(&lin, &u, (0.0, 0.5), 3, None).unwrap();
        let b = average_source(&lin, &u, (0.5, 1.0), 3, None).unwrap();
        assert!((a.values()[0] - 0.25).abs() < 1e-15);
        assert!((b.values()[1] - 0.75).abs() < 1e-15);
        assert!(average_source(&lin, &u, (1.0, 1.0), 3, None).is_err());
    }

    #[test]
    fn zero_step_and_zero_run() {
        let prm = params(2.0, 1.0, SourceSpec::Zero, 16);
        let z = Field::zeros(prm.grid);
        let scheme = SchemeConfig::new(1.0, 10);
        let (u, _, _) = step(&z, 0.0, 0.1, &prm, &scheme, None).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        let pw = params(2.0, 1.0, SourceSpec::power(2.0).unwrap(), 16);
        let mut fixed = scheme.clone();
        fixed.radius = TruncationRadius::Fixed(1.0);
        let traj = run_trajectory(&z, &pw, &fixed).unwrap();
        assert_eq!(traj.status, RunStatus::Completed);
        assert_eq!(traj.steps(), 10);
        assert!(traj.levels.iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn step_is_linf_stable_and_dissipative() {
        for &(m, mu) in &[(1.0, 0.0), (2.0, 1.0), (1.5, 0.5)] {
            let prm = params(m, mu, SourceSpec::Zero, 32);
            let u0 = Field::from_fn(prm.grid, |x| smooth_bump(x, 1.5, 0.4, 0.3) - smooth_bump(x, 0.7, 0.8, 0.15));
            let scheme = SchemeConfig::new(1.0, 10);
            let (u1, rep, _) = step(&u0, 0.0, 0.01, &prm, &scheme, None).unwrap();
            let b0 = u0.map(|x| prm.beta.eval(x)).max_abs();
            let b1 = u1.map(|x| prm.beta.eval(x)).max_abs();
            assert!(b1 <= b0 + 1e-8, "m={m}: {b1} > {b0}");
            assert!(rep.linf_bound_holds());
            let j0 = operators::energy_j(&u0, &prm).unwrap();
            let j1 = operators::energy_j(&u1, &prm).unwrap();
            assert!(j1 <= j0 + 1e-8);
        }
    }

    #[test]
    fn constant_source_from_zero_is_monotone() {
        let src = SourceSpec::ConstantInU(SourceProfile::Bump {
            amplitude: 2.0,
            center: 0.5,
            width: 0.3,
        });
        let prm = params(1.5, 1.0, src, 24);
        let scheme = SchemeConfig::new(0.5, 20);
        let traj = run_trajectory(&Field::zeros(prm.grid), &prm, &scheme).unwrap();
        assert_eq!(traj.status, RunStatus::Completed);
        assert!(traj.radius.is_none());
        for w in traj.levels.windows(2) {
            for (a, b) in w[0].values().iter().zip(w[1].values()) {
                assert!(*b >= a - 1e-10);
            }
        }
        assert!(traj.linf_bound_excess() <= 1e-8);
    }

    #[test]
    fn interpolants_conventions() {
        let prm = params(2.0, 0.0, SourceSpec::Zero, 16);
        let u0 = Field::from_fn(prm.grid, |x| smooth_bump(x, 1.0, 0.5, 0.4));
        let traj = run_trajectory(&u0, &prm, &SchemeConfig::new(0.2, 4)).unwrap();
        for n in 0..=4 {
            let it = traj.interpolants(traj.times[n]).unwrap();
            assert_eq!(it.u_tilde, traj.levels[n]);
            assert_eq!(it.beta_tilde, traj.beta_levels[n]);
            assert_eq!(it.u_piecewise, traj.levels[n]);
        }
        let mid = 0.5 * (traj.times[1] + traj.times[2]);
        let it = traj.interpolants(mid).unwrap();
        let mean = traj.levels[1].zip_map(&traj.levels[2], |a, b| 0.5 * (a + b)).unwrap();
        for (a, b) in it.u_tilde.values().iter().zip(mean.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(it.u_piecewise, traj.levels[2]);
        // beta_tilde is not beta(u_tilde) for m != 1
        let beta_of = it.u_tilde.map(|x| prm.beta.eval(x));
        let gap = it.beta_tilde.zip_map(&beta_of, |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(gap > 1e-8);
        assert!(matches!(traj.interpolants(1.0), Err(Error::OutOfRange(_))));
        assert!(matches!(traj.interpolants(-0.1), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn auto_radius_closes_for_short_horizon() {
        let prm = params(2.0, 1.0, SourceSpec::power(1.0).unwrap(), 16);
        let u0 = Field::from_fn(prm.grid, |x| smooth_bump(x, 0.5, 0.5, 0.3));
        let r = auto_radius(&u0, &prm, 0.2).unwrap().unwrap();
        assert!(r > u0.max_abs());
        // a superlinear source over a long horizon does not close
        let big = params(2.0, 1.0, SourceSpec::power(3.0).unwrap(), 16);
        assert!(auto_radius(&u0, &big, 50.0).is_err());
        let traj = run_trajectory(&u0, &prm, &SchemeConfig::new(0.2, 10)).unwrap();
        assert_eq!(traj.radius, Some(r));
        assert!(traj.levels.iter().all(|u| u.max_abs() <= r));
        assert!(traj.linf_bound_excess() <= 1e-8);
    }

    #[test]
    fn implicit_source_variant_runs() {
        let prm = params(2.0, 1.0, SourceSpec::power(1.0).unwrap(), 16);
        let u0 = Field::from_fn(prm.grid, |x| smooth_bump(x, 0.5, 0.5, 0.3));
        let mut scheme = SchemeConfig::new(0.2, 10);
        scheme.implicit_source = true;
        let traj = run_trajectory(&u0, &prm, &scheme).unwrap();
        assert_eq!(traj.status, RunStatus::Completed);
        // stored g^n is g(u^n) in the implicit variant
        for n in 1..=10 {
            let g = &traj.source_levels[n - 1];
            for (gi, ui) in g.values().iter().zip(traj.levels[n].values()) {
                assert!((gi - ui).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_estimate_is_reported() {
        let prm = params(1.0, 0.0, SourceSpec::Zero, 16);
        let u0 = Field::from_fn(prm.grid, |x| smooth_bump(x, 1.0, 0.5, 0.4));
        let coarse = run_trajectory(&u0, &prm, &SchemeConfig::new(0.1, 10)).unwrap();
        let fine = run_trajectory(&u0, &prm, &SchemeConfig::new(0.1, 20)).unwrap();
        let (a, b) = (coarse.a_priori_energy(), fine.a_priori_energy());
        assert!(a.is_finite() && b.is_finite());
        assert!(b <= 2.0 * a);
        assert!(coarse.convection_pairings().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn invalid_scheme_rejected() {
        let prm = params(1.0, 0.0, SourceSpec::Zero, 4);
        let z = Field::zeros(prm.grid);
        assert!(run_trajectory(&z, &prm, &SchemeConfig::new(0.0, 10)).is_err());
        assert!(run_trajectory(&z, &prm, &SchemeConfig::new(1.0, 0)).is_err());
        let mut s = SchemeConfig::new(1.0, 2);
        s.radius = TruncationRadius::Fixed(-1.0);
        assert!(run_trajectory(&z, &prm, &s).is_err());
    }
}
