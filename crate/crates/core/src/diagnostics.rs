//! Checks of computed trajectories against the qualitative properties of the evolution:
//! approximate-solution certificates, L1 contraction, comparison, energy dissipation,
//! extinction, blow-up, stationary residuals and sampled accretivity.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid};
use crate::nonlinearities::{validate_regime, Regime};
use crate::operators::{self, ModelParams, NonlocalKernel};
use crate::time_stepper::{evolution_exponent, Trajectory};

/// One named check: passes iff `measured <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            bound,
            pass: measured <= bound,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub checks: Vec<Check>,
    /// Named per-level or per-step series backing the checks.
    pub series: BTreeMap<String, Vec<f64>>,
}

impl DiagnosticsReport {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn merge(&mut self, other: DiagnosticsReport) {
        self.checks.extend(other.checks);
        self.series.extend(other.series);
    }
}

fn l1(a: &[f64], b: &[f64], h: f64) -> f64 {
    h * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

fn l1_norm(a: &[f64], h: f64) -> f64 {
    h * a.iter().map(|x| x.abs()).sum::<f64>()
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `A(u) = A_mu u - Div f(u)`.
fn full_operator(u: &Field, params: &ModelParams, kernel: &NonlocalKernel) -> Result<Field> {
    let a = operators::apply_a_mu(u, params, kernel)?;
    let d = operators::apply_divergence_flux(u, &params.flux);
    a.zip_map(&d, |x, y| x - y)
}

// ---------------------------------------------------------------------------
// epsilon-approximate solutions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsCertificate {
    /// Largest step size.
    pub epsilon_time: f64,
    /// `||U(0) - beta(u0)||_1`.
    pub epsilon_data: f64,
    /// `sum_n int_{t_{n-1}}^{t_n} ||g(tau, ., u^n) - g^n||_1 dtau`.
    pub epsilon_source: f64,
    /// `||(U_n - U_{n-1}) / dt + A(u^n) - g^n||_1` with `U_n = beta(u^n)`.
    pub step_residuals: Vec<f64>,
}

impl EpsCertificate {
    pub fn max_step_residual(&self) -> f64 {
        self.step_residuals.iter().fold(0.0, |m, &r| m.max(r))
    }

    /// Every component below `eps`.
    pub fn certifies(&self, eps: f64) -> bool {
        self.epsilon_time < eps
            && self.epsilon_data < eps
            && self.epsilon_source < eps
            && self.max_step_residual() < eps
    }
}

/// Certificate of the trajectory as an approximate solution of `U' + A(beta^{-1} U) = g`.
///
/// The residual applies the model operator `A_mu` (with convection) to `u^n`. It is not
/// a fractional p-Laplacian of `|U|^{m-1} U`, which is a different operator.
pub fn certify_eps_approximation(traj: &Trajectory) -> Result<EpsCertificate> {
    const QUAD: usize = 4;
    let params = &traj.params;
    let grid = params.grid;
    let h = grid.h();
    let nodes = grid.nodes();
    let kernel = params.kernel();
    let u0_beta: Vec<f64> = traj.levels[0].values().iter().map(|&x| params.beta.eval(x)).collect();
    let epsilon_data = l1(traj.beta_levels[0].values(), &u0_beta, h);
    let epsilon_time = traj.dt_history.iter().fold(0.0, |m: f64, &d| m.max(d));
    let mut epsilon_source = 0.0;
    let mut step_residuals = Vec::with_capacity(traj.steps());
    for n in 1..=traj.steps() {
        let dt = traj.dt_history[n - 1];
        let (t0, u) = (traj.times[n - 1], &traj.levels[n]);
        let g = &traj.source_levels[n - 1];
        let mut defect = 0.0;
        for k in 0..QUAD {
            let tau = t0 + (k as f64 + 0.5) * dt / QUAD as f64;
            let diff: f64 = nodes
                .iter()
                .zip(u.values())
                .zip(g.values())
                .map(|((&x, &ui), &gi)| (params.source.eval(tau, x, ui) - gi).abs())
                .sum();
            defect += h * diff * dt / QUAD as f64;
        }
        epsilon_source += defect;
        let a = full_operator(u, params, &kernel)?;
        let res: Vec<f64> = (0..grid.len())
            .map(|i| {
                (traj.beta_levels[n].values()[i] - traj.beta_levels[n - 1].values()[i]) / dt + a.values()[i]
                    - g.values()[i]
            })
            .collect();
        step_residuals.push(l1_norm(&res, h));
    }
    Ok(EpsCertificate {
        epsilon_time,
        epsilon_data,
        epsilon_source,
        step_residuals,
    })
}

/// `sup_n ||beta(u^n_coarse) - beta_tilde_fine(t_n)||_1`, the discrete Cauchy difference
/// between two runs on the same spatial grid.
pub fn cauchy_difference(coarse: &Trajectory, fine: &Trajectory) -> Result<f64> {
    coarse.params.grid.check_same(&fine.params.grid)?;
    if (coarse.final_time() - fine.final_time()).abs() > 1e-12 * coarse.final_time().max(1.0) {
        return Err(Error::Incompatible(format!(
            "trajectories end at different times ({} vs {})",
            coarse.final_time(),
            fine.final_time()
        )));
    }
    let h = coarse.params.grid.h();
    let mut sup = 0.0f64;
    for (t, b) in coarse.times.iter().zip(&coarse.beta_levels) {
        let it = fine.interpolants(t.min(fine.final_time()))?;
        sup = sup.max(l1(b.values(), it.beta_tilde.values(), h));
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// contraction and comparison
// ---------------------------------------------------------------------------

fn check_compatible(a: &Trajectory, b: &Trajectory) -> Result<()> {
    a.params.grid.check_same(&b.params.grid)?;
    let same_times = a.times.len() == b.times.len()
        && a.times.iter().zip(&b.times).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    if !same_times {
        return Err(Error::Incompatible("trajectories use different time grids".into()));
    }
    Ok(())
}

/// Discrete L1 contraction: at every level
/// `||beta(u^n) - beta(v^n)||_1 <= ||beta(u^0) - beta(v^0)||_1 + sum_{k <= n} dt_k ||g_a^k - g_b^k||_1`,
/// using the averaged sources stored with each trajectory.
///
/// Reports `contraction` (largest excess of the left side over all levels),
/// `contraction_stepwise` (sum over steps of the positive one-step excesses) and
/// `convection_defect`, `sum_n dt_n (h sum_i [Div f(u^n) - Div f(v^n)]_i sgn(u^n_i - v^n_i))_+`:
/// the amount by which central-difference convection fails to be accretive along the two runs.
/// The diffusion part is accretive, so `contraction` can only exceed zero by this defect.
/// `extra_tolerance` is added to `1e-8` in every bound.
pub fn check_contraction(a: &Trajectory, b: &Trajectory, extra_tolerance: f64) -> Result<DiagnosticsReport> {
    check_compatible(a, b)?;
    let h = a.params.grid.h();
    let dist: Vec<f64> = a
        .beta_levels
        .iter()
        .zip(&b.beta_levels)
        .map(|(x, y)| l1(x.values(), y.values(), h))
        .collect();
    let mut rhs = vec![dist[0]];
    let mut stepwise = 0.0;
    let mut defect = 0.0;
    let mut defect_series = vec![0.0];
    let convective = !(a.params.flux.is_zero() && b.params.flux.is_zero());
    for n in 1..dist.len() {
        let dt = a.dt_history[n - 1];
        let src = dt * l1(a.source_levels[n - 1].values(), b.source_levels[n - 1].values(), h);
        rhs.push(rhs[n - 1] + src);
        stepwise += (dist[n] - dist[n - 1] - src).max(0.0);
        if convective {
            let (u, v) = (&a.levels[n], &b.levels[n]);
            let du = operators::apply_divergence_flux(u, &a.params.flux);
            let dv = operators::apply_divergence_flux(v, &b.params.flux);
            let c = h * (0..u.len())
                .map(|i| (du.values()[i] - dv.values()[i]) * sgn(u.values()[i] - v.values()[i]))
                .sum::<f64>();
            defect += dt * c.max(0.0);
        }
        defect_series.push(defect);
    }
    let excess = dist
        .iter()
        .zip(&rhs)
        .map(|(l, r)| l - r)
        .fold(f64::NEG_INFINITY, f64::max);
    let bound = 1e-8 + extra_tolerance;
    let mut report = DiagnosticsReport::default();
    report.push(Check::new("contraction", excess, bound));
    report.push(Check::new("contraction_stepwise", stepwise, bound));
    report.push(Check::new("convection_defect", defect, bound));
    report.series.insert("contraction_lhs".into(), dist);
    report.series.insert("contraction_rhs".into(), rhs);
    report.series.insert("convection_defect".into(), defect_series);
    Ok(report)
}

/// Comparison: `u^0 <= v^0` is required; reports `max_{n,i} (u^n_i - v^n_i)_+` against
/// `1e-8` (no convection) or `c_h * h`.
pub fn check_comparison(a: &Trajectory, b: &Trajectory, c_h: f64) -> Result<DiagnosticsReport> {
    check_compatible(a, b)?;
    let unordered = a.levels[0]
        .values()
        .iter()
        .zip(b.levels[0].values())
        .any(|(x, y)| x > &(y + 1e-12));
    if unordered {
        return Err(Error::InvalidComparison("initial data are not ordered (u0 <= v0 fails)".into()));
    }
    let mut worst = 0.0f64;
    let mut series = Vec::with_capacity(a.levels.len());
    for (u, v) in a.levels.iter().zip(&b.levels) {
        let m = u
            .values()
            .iter()
            .zip(v.values())
            .fold(0.0f64, |m, (x, y)| m.max(x - y));
        worst = worst.max(m);
        series.push(m);
    }
    let bound = if a.params.flux.is_zero() && b.params.flux.is_zero() {
        1e-8
    } else {
        c_h * a.params.grid.h()
    };
    let mut report = DiagnosticsReport::default();
    report.push(Check::new("comparison", worst, bound));
    report.series.insert("positive_part".into(), series);
    Ok(report)
}

// ---------------------------------------------------------------------------
// energy
// ---------------------------------------------------------------------------

/// Per-step energy balance.
///
/// With `g = f = 0`: the increments `J(u^n) - J(u^{n-1})` must not exceed `1e-8 (1 + J(u^0))`.
/// Otherwise convexity of `J` gives the bound
/// `J(u^n) - J(u^{n-1}) + <beta(u^n) - beta(u^{n-1}), du> / dt <= <g^n + Div f(u^n), du>`,
/// `du = u^n - u^{n-1}`, checked with the same tolerance.
pub fn check_energy_dissipation(traj: &Trajectory) -> Result<DiagnosticsReport> {
    let params = &traj.params;
    let kernel = params.kernel();
    let h = params.grid.h();
    let energies: Vec<f64> = traj
        .levels
        .iter()
        .map(|u| operators::energy_j_with(u, params, &kernel))
        .collect();
    let strict = params.source.is_zero() && params.flux.is_zero();
    let mut increments = Vec::with_capacity(traj.steps());
    let mut balance = Vec::with_capacity(traj.steps());
    for n in 1..=traj.steps() {
        let inc = energies[n] - energies[n - 1];
        increments.push(inc);
        let (u, up) = (traj.levels[n].values(), traj.levels[n - 1].values());
        let (b, bp) = (traj.beta_levels[n].values(), traj.beta_levels[n - 1].values());
        let div = operators::apply_divergence_flux(&traj.levels[n], &params.flux);
        let g = traj.source_levels[n - 1].values();
        let dt = traj.dt_history[n - 1];
        let mut storage = 0.0;
        let mut work = 0.0;
        for i in 0..u.len() {
            let du = u[i] - up[i];
            storage += (b[i] - bp[i]) * du;
            work += (g[i] + div.values()[i]) * du;
        }
        balance.push(inc + h * storage / dt - h * work);
    }
    let tol = 1e-8 * (1.0 + energies[0].abs());
    let mut report = DiagnosticsReport::default();
    if strict {
        let worst = increments.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        report.push(Check::new("energy_dissipation", worst.max(0.0), tol));
    } else {
        let worst = balance.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        report.push(Check::new("energy_balance", worst.max(0.0), tol));
    }
    report.series.insert("energy_j".into(), energies);
    report.series.insert("energy_increment".into(), increments);
    report.series.insert("energy_balance".into(), balance);
    Ok(report)
}

// ---------------------------------------------------------------------------
// extinction and blow-up
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtinctionReport {
    pub extinct_at: Option<f64>,
    pub k: f64,
    pub alpha: f64,
    pub times: Vec<f64>,
    /// `Z_n = Y_n^{1-alpha}`, `Y_n = ||u^n||_{1/m+k}^{1/m+k}`.
    pub z_series: Vec<f64>,
    /// Largest increment `Z_n - Z_{n-1}` over `n >= 2`.
    pub max_increment_after_first: f64,
    /// `(Z_0 - Z_end) / t_end`, the empirical decay constant.
    pub measured_slope: f64,
}

impl ExtinctionReport {
    /// `Z` is nonincreasing after the first step, up to `1e-12 Z_0`.
    pub fn z_nonincreasing(&self) -> bool {
        let z0 = self.z_series.first().copied().unwrap_or(0.0);
        self.max_increment_after_first <= 1e-12 * z0.max(f64::MIN_POSITIVE)
    }
}

/// Smallest admissible `k` for the decay argument: `min(1, (1 - sq - (q-1)m) / (m s q))`.
pub fn extinction_k_lower_bound(m: f64, s: f64, q: f64) -> f64 {
    1.0f64.min((1.0 - s * q - (q - 1.0) * m) / (m * s * q))
}

pub fn detect_extinction(traj: &Trajectory, k: f64) -> Result<ExtinctionReport> {
    let params = &traj.params;
    let mut bad = validate_regime(params, Regime::Extinction);
    let m = params.beta.m().unwrap_or(f64::NAN);
    let kmin = extinction_k_lower_bound(m, params.s, params.q);
    if !(k >= kmin) {
        bad.push(format!("k >= {kmin} fails: k = {k}"));
    }
    let gamma = 1.0 / m + k;
    let alpha = (params.q - 1.0 + k) / gamma;
    if !(alpha < 1.0) {
        bad.push(format!("alpha < 1 fails: alpha = {alpha}"));
    }
    if !bad.is_empty() {
        return Err(Error::InvalidRegime(bad));
    }
    let h = params.grid.h();
    let z_series: Vec<f64> = traj
        .levels
        .iter()
        .map(|u| (h * u.values().iter().map(|x| x.abs().powf(gamma)).sum::<f64>()).powf(1.0 - alpha))
        .collect();
    let max_increment_after_first = z_series
        .windows(2)
        .skip(1)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let t_end = traj.final_time();
    let measured_slope = if t_end > 0.0 {
        (z_series[0] - z_series[z_series.len() - 1]) / t_end
    } else {
        0.0
    };
    let extinct_at = traj
        .levels
        .iter()
        .zip(&traj.times)
        .find(|(u, _)| u.max_abs() < traj.extinction_threshold)
        .map(|(_, &t)| t);
    Ok(ExtinctionReport {
        extinct_at,
        k,
        alpha,
        times: traj.times.clone(),
        z_series,
        max_increment_after_first,
        measured_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    pub blown_up_at: Option<f64>,
    pub energy_e0: f64,
    pub energy_e0_negative: bool,
    /// `W_n = ||u^n||_{1/m+1}^{1/m+1}`.
    pub w_series: Vec<f64>,
    /// `min_n (W_n - W_0) / sum_{k <= n} dt_k W_k^sigma`, `sigma = (r+1)/(1/m+1)`.
    pub c_meas: f64,
    /// Least-squares slope of `log(dW/dt)` against `log W` over growing steps.
    pub measured_exponent: f64,
    /// `1/m - r`: the exponent of `||u0||_{1+1/m}` in the blow-up time bound.
    pub scaling_exponent: f64,
    /// `||u0||_{1+1/m}^{1/m-r}`, the blow-up time bound up to its constant.
    pub tstar_relative: f64,
}

pub fn detect_blowup(traj: &Trajectory) -> Result<BlowupReport> {
    let params = &traj.params;
    let bad = validate_regime(params, Regime::BlowUp);
    if !bad.is_empty() {
        return Err(Error::InvalidRegime(bad));
    }
    let m = params.beta.m().expect("validated power beta");
    let r = params.source.power_exponent().expect("validated power source");
    let gamma = evolution_exponent(&params.beta);
    let h = params.grid.h();
    let w_series: Vec<f64> = traj
        .levels
        .iter()
        .map(|u| grid::lp_norm_unchecked(u.values(), h, gamma).powf(gamma))
        .collect();
    let sigma = (r + 1.0) / gamma;
    let mut acc = 0.0;
    let mut c_meas = f64::INFINITY;
    for n in 1..w_series.len() {
        acc += traj.dt_history[n - 1] * w_series[n].powf(sigma);
        if acc > 0.0 {
            c_meas = c_meas.min((w_series[n] - w_series[0]) / acc);
        }
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for n in 1..w_series.len() {
        let rate = (w_series[n] - w_series[n - 1]) / traj.dt_history[n - 1];
        if rate > 0.0 && w_series[n] > 0.0 && rate.is_finite() {
            let (x, y) = (w_series[n].ln(), rate.ln());
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            cnt += 1.0;
        }
    }
    let denom = cnt * sxx - sx * sx;
    let measured_exponent = if cnt >= 2.0 && denom > 0.0 {
        (cnt * sxy - sx * sy) / denom
    } else {
        f64::NAN
    };
    let energy_e0 = operators::energy_e(&traj.levels[0], params)?;
    let norm0 = w_series[0].powf(1.0 / gamma);
    let scaling_exponent = 1.0 / m - r;
    let blown_up_at = traj
        .levels
        .iter()
        .zip(&traj.times)
        .find(|(u, _)| {
            let nrm = grid::lp_norm_unchecked(u.values(), h, gamma);
            nrm > traj.blowup_threshold || !nrm.is_finite()
        })
        .map(|(_, &t)| t);
    Ok(BlowupReport {
        blown_up_at,
        energy_e0,
        energy_e0_negative: energy_e0 < 0.0,
        w_series,
        c_meas: if c_meas.is_finite() { c_meas } else { f64::NAN },
        measured_exponent,
        scaling_exponent,
        tstar_relative: norm0.powf(scaling_exponent),
    })
}

// ---------------------------------------------------------------------------
// stationary problem and accretivity
// ---------------------------------------------------------------------------

/// `h sum_i |A_mu u - Div f(u) - h_src|_i`.
pub fn stationary_residual(u: &Field, params: &ModelParams, source: &Field) -> Result<f64> {
    params.grid.check_same(u.grid())?;
    params.grid.check_same(source.grid())?;
    let a = full_operator(u, params, &params.kernel())?;
    let h = params.grid.h();
    Ok(l1(a.values(), source.values(), h))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccretivityReport {
    pub n: usize,
    pub trials: usize,
    /// `min S` over all pairs.
    pub min_sum: f64,
    /// Largest `(-S_conv)_+` over the smooth pairs, where `S_conv` is the convection part
    /// `-h sum (Div f(u) - Div f(u~))_i sgn(v_i - w_i)` alone.
    pub convection_violation: f64,
    pub report: DiagnosticsReport,
}

/// Sum of a few random sine modes, in the `beta` variable.
fn smooth_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = grid.b() - grid.a();
    let coeffs: Vec<f64> = (1..=5).map(|k| rng.gen_range(-1.0..1.0) / k as f64).collect();
    grid.nodes()
        .iter()
        .map(|&x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * (x - grid.a()) / len).sin())
                .sum()
        })
        .collect()
}

/// Samples `S = h sum [A(v) - A(w)]_i sgn(v_i - w_i)` with `A(v) = A_mu beta^{-1}(v) - Div f(beta^{-1}(v))`
/// over `trials` random pairs on an `n`-node grid of the same interval.
///
/// Even trials use smooth fields (sums of sine modes); odd trials use independent nodal
/// values. The check bound is `-1e-10` without convection and `-c_h h` with it.
pub fn sample_accretivity(params: &ModelParams, trials: usize, n: usize, seed: u64, c_h: f64) -> Result<AccretivityReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let grid = Grid::new(params.grid.a(), params.grid.b(), n)?;
    let mut prm = params.clone();
    prm.grid = grid;
    let kernel = prm.kernel();
    let h = grid.h();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_sum = f64::INFINITY;
    let mut convection_violation = 0.0f64;
    let mut sums = Vec::with_capacity(trials);
    for trial in 0..trials {
        let (v, w) = if trial % 2 == 0 {
            (smooth_field(&grid, &mut rng), smooth_field(&grid, &mut rng))
        } else {
            let mut draw = || (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            (draw(), draw())
        };
        let u = Field::from_raw(grid, v.iter().map(|&x| prm.beta.inv(x)).collect());
        let ut = Field::from_raw(grid, w.iter().map(|&x| prm.beta.inv(x)).collect());
        let au = full_operator(&u, &prm, &kernel)?;
        let aw = full_operator(&ut, &prm, &kernel)?;
        let s = h * (0..n)
            .map(|i| (au.values()[i] - aw.values()[i]) * sgn(v[i] - w[i]))
            .sum::<f64>();
        min_sum = min_sum.min(s);
        sums.push(s);
        if trial % 2 == 0 && !prm.flux.is_zero() {
            let du = operators::apply_divergence_flux(&u, &prm.flux);
            let dw = operators::apply_divergence_flux(&ut, &prm.flux);
            let conv = -h * (0..n)
                .map(|i| (du.values()[i] - dw.values()[i]) * sgn(v[i] - w[i]))
                .sum::<f64>();
            convection_violation = convection_violation.max(-conv);
        }
    }
    let bound = if prm.flux.is_zero() { 1e-10 } else { c_h * h };
    let mut report = DiagnosticsReport::default();
    report.push(Check::new("accretivity", -min_sum, bound));
    report.series.insert("accretivity_sums".into(), sums);
    Ok(AccretivityReport {
        n,
        trials,
        min_sum,
        convection_violation,
        report,
    })
}
