//! Resolvent and stationary solves.
//!
//! The resolvent problem is taken in the form
//!
//! ```text
//! beta(u) / lambda + A_mu u = Div f(u) + rhs,
//! ```
//!
//! so that the maximum-principle bound reads `||beta(u)||_inf <= lambda ||rhs||_inf`.
//! For a frozen convection argument `w` the equation is the Euler-Lagrange equation of
//!
//! ```text
//! J_w(u) = h sum B(u_i) + lambda J(u) - lambda h sum rhs_i u_i - lambda h sum u_i (Div f(w))_i,
//! ```
//!
//! which is minimized by damped Newton with an Armijo line search. The outer loop is a
//! damped Picard iteration `w <- (1 - theta) w + theta u`. In stationary mode the
//! `B` term is dropped and `lambda = 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Field};
use crate::operators::{self, phi, ModelParams, NonlocalKernel};

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const OVERSHOOT_STEPS: usize = 8;
const TRUNCATION_MARGIN: f64 = 1.1;
const TRUNCATION_RETRIES: usize = 3;
const LINF_BOUND_SLACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Resolvent,
    Stationary,
}

#[derive(Debug, Clone)]
pub struct EllipticProblem {
    pub params: ModelParams,
    pub lambda: f64,
    pub rhs: Field,
    /// Starting convection iterate; also the warm start of the first inner solve.
    pub w0: Field,
    pub mode: SolveMode,
}

impl EllipticProblem {
    pub fn resolvent(params: ModelParams, lambda: f64, rhs: Field) -> Result<Self> {
        let w0 = Field::zeros(params.grid);
        let problem = EllipticProblem {
            params,
            lambda,
            rhs,
            w0,
            mode: SolveMode::Resolvent,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn stationary(params: ModelParams, rhs: Field) -> Result<Self> {
        let w0 = Field::zeros(params.grid);
        let problem = EllipticProblem {
            params,
            lambda: 1.0,
            rhs,
            w0,
            mode: SolveMode::Stationary,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_start(mut self, w0: Field) -> Result<Self> {
        self.params.grid.check_same(w0.grid())?;
        self.w0 = w0;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.params.grid.check_same(self.rhs.grid())?;
        self.params.grid.check_same(self.w0.grid())?;
        if self.mode == SolveMode::Resolvent && !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "resolvent needs lambda > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn has_beta(&self) -> bool {
        self.mode == SolveMode::Resolvent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Inner stopping rule: `||residual||_inf <= inner_tol (1 + ||rhs + Div f(w)||_inf)`.
    pub inner_tol: f64,
    /// Outer stopping rule: `||u_k - w_k||_{W1p} <= fp_tol (1 + ||u_k||_{W1p})`.
    pub fp_tol: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Largest grid with a dense Hessian; conjugate gradients above.
    pub dense_limit: usize,
    /// Replace `f` by `f_R` with `R` from the maximum-principle bound (resolvent mode only).
    pub truncate_flux: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            inner_tol: 1e-10,
            fp_tol: 1e-8,
            max_inner: 200,
            max_outer: 200,
            dense_limit: 512,
            truncate_flux: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol > 0.0) || !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if self.max_inner == 0 || self.max_outer == 0 {
            return Err(Error::InvalidParameter("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub final_fixed_point_residual: f64,
    /// Max-norm of the nodal residual of the last inner solve.
    pub final_gradient_norm: f64,
    /// Measured `||beta(u)||_inf`.
    pub beta_linf: f64,
    /// `lambda ||rhs||_inf` (resolvent mode), `None` in stationary mode.
    pub beta_linf_bound: Option<f64>,
    /// Flux truncation radius used, if any.
    pub truncation_radius: Option<f64>,
    /// Fixed-point residual after each outer iteration.
    pub fixed_point_history: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    /// `beta_linf <= bound + 1e-8`; vacuous in stationary mode.
    pub fn linf_bound_holds(&self) -> bool {
        self.beta_linf_bound
            .is_none_or(|b| self.beta_linf <= b + LINF_BOUND_SLACK)
    }
}

/// Result of one inner minimization.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub u: Field,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// `J_w` at every accepted iterate, starting with the initial guess.
    pub objective_history: Vec<f64>,
}

/// Frozen-`w` objective with everything precomputed that does not depend on `u`.
struct Objective<'a> {
    params: &'a ModelParams,
    kernel: &'a NonlocalKernel,
    lambda: f64,
    with_beta: bool,
    /// `rhs + Div f(w)`.
    load: Vec<f64>,
    h: f64,
    /// Magnitude of the expected solution, used to floor singular curvatures.
    u_ref: f64,
}

impl<'a> Objective<'a> {
    fn new(
        problem: &'a EllipticProblem,
        kernel: &'a NonlocalKernel,
        flux: &crate::nonlinearities::FluxSpec,
        w: &Field,
    ) -> Self {
        let conv = operators::apply_divergence_flux(w, flux);
        let load = problem
            .rhs
            .values()
            .iter()
            .zip(conv.values())
            .map(|(r, c)| r + c)
            .collect::<Vec<f64>>();
        let load_inf = inf_norm(&load);
        let params = &problem.params;
        let u_ref = if problem.has_beta() {
            params.beta.inv(problem.lambda * load_inf)
        } else {
            let len = params.grid.b() - params.grid.a();
            (load_inf * len.powf(params.p)).powf(1.0 / (params.p - 1.0))
        };
        Objective {
            params: &problem.params,
            kernel,
            lambda: problem.lambda,
            with_beta: problem.has_beta(),
            load,
            h: problem.params.grid.h(),
            u_ref,
        }
    }

    fn field(&self, u: &[f64]) -> Field {
        Field::from_raw(self.params.grid, u.to_vec())
    }

    /// `J_w / lambda`.
    fn value(&self, u: &[f64]) -> f64 {
        let f = self.field(u);
        let mut v = operators::energy_j_with(&f, self.params, self.kernel);
        v -= operators::pairing(&self.load, u, self.h);
        if self.with_beta {
            let b: f64 = u.iter().map(|&x| self.params.beta.primitive(x)).sum();
            v += self.h * b / self.lambda;
        }
        v
    }

    /// Nodal residual `beta(u)/lambda + A u - rhs - Div f(w)`; the gradient of `value` is `h` times this.
    fn residual(&self, u: &[f64]) -> Vec<f64> {
        let f = self.field(u);
        let au = operators::apply_a_mu(&f, self.params, self.kernel).expect("grid checked");
        let mut r: Vec<f64> = au
            .values()
            .iter()
            .zip(&self.load)
            .map(|(a, l)| a - l)
            .collect();
        if self.with_beta {
            for (ri, &x) in r.iter_mut().zip(u) {
                *ri += self.params.beta.eval(x) / self.lambda;
            }
        }
        r
    }

    /// Size of the individual terms of the residual, for a roundoff floor.
    fn term_scale(&self, u: &[f64]) -> f64 {
        let f = self.field(u);
        let h = self.h;
        let p = self.params.p;
        let slopes = grid::face_slopes(&f);
        let mut scale = 0.0f64;
        for i in 0..u.len() {
            let mut t = (phi(slopes[i], p).abs() + phi(slopes[i + 1], p).abs()) / h;
            t += self.load[i].abs();
            if self.with_beta {
                t += self.params.beta.eval(u[i]).abs() / self.lambda;
            }
            if self.params.mu != 0.0 {
                let q = self.params.q;
                let mut acc = 0.0;
                for j in 0..u.len() {
                    if j != i {
                        acc += self.kernel.weight(i, j) * phi(u[i] - u[j], q).abs();
                    }
                }
                acc += self.kernel.tail()[i] * phi(u[i], q).abs();
                t += 2.0 * self.params.mu * acc;
            }
            scale = scale.max(t);
        }
        scale
    }

    fn floor_scale(&self, u: &[f64]) -> f64 {
        inf_norm(u).max(self.u_ref).max(1e-280)
    }

    /// Whether the storage term is nonlinear, so that Newton updates are better taken in `beta(u)`.
    fn curved(&self) -> bool {
        self.with_beta && self.params.beta.m() != Some(1.0)
    }

    /// `beta^{-1}(beta(u) + alpha beta'(u) d)`: the Newton update carried out in the variable
    /// `beta(u)`, with the same floored `beta'` as the Newton curvature. Tangent to `d` at 0.
    fn curved_point(&self, u: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
        let floor = 1e-8 * self.floor_scale(u);
        let beta = &self.params.beta;
        u.iter()
            .zip(d)
            .map(|(&x, &di)| {
                let t = if x.abs() < floor { floor.copysign(if x == 0.0 { di } else { x }) } else { x };
                beta.inv(beta.eval(x) + alpha * beta.derivative(t) * di)
            })
            .collect()
    }

    /// Coefficients of the Hessian of `value / h`.
    ///
    /// With `majorize`, the sub-quadratic parts (`B` for `m > 1`, the nonlocal term for
    /// `q < 2`) use the chord slope `phi(t)/t` instead of the derivative, which gives a
    /// quadratic majorant and full steps that reach zero in those components. Nonlocal pairs
    /// and tails flagged in `ties` use the chord slope in either mode.
    fn curvature(&self, u: &[f64], majorize: bool, ties: &Ties) -> Curvature {
        let n = u.len();
        let h = self.h;
        let scale = self.floor_scale(u);
        // Newton steps tolerate a coarse floor; the majorant must stay close to the chord
        let floor = if majorize { 1e-20 * scale } else { 1e-8 * scale };

        let mut diag = vec![0.0; n];
        if self.with_beta {
            for (d, &x) in diag.iter_mut().zip(u) {
                let t = if x.abs() < floor { floor } else { x };
                let beta = &self.params.beta;
                let c = if majorize {
                    beta.eval(t) / t
                } else {
                    beta.derivative(t)
                };
                *d += c / self.lambda;
            }
        }

        let p = self.params.p;
        let f = self.field(u);
        let faces: Vec<f64> = grid::face_slopes(&f)
            .into_iter()
            .map(|d| (p - 1.0) * d.abs().powf(p - 2.0) / (h * h))
            .collect();
        for i in 0..n {
            diag[i] += faces[i] + faces[i + 1];
        }

        let mut pair = Vec::new();
        if self.params.mu != 0.0 {
            let coeff = PairCoefficient::new(self, u, majorize);
            if n <= DENSE_PAIR_LIMIT {
                pair = vec![0.0; n * n];
            }
            for i in 0..n {
                let mut d = coeff.tail(i, u[i], ties.tail(i));
                for j in 0..n {
                    if j != i {
                        let c = coeff.pair(i, j, u[i] - u[j], ties.pair(i, j, n));
                        d += c;
                        if !pair.is_empty() {
                            pair[i * n + j] = c;
                        }
                    }
                }
                diag[i] += d;
            }
        }
        Curvature {
            diag,
            faces,
            pair,
            majorize,
        }
    }

    /// Size of the nonlocal residual that survives at a tie `u_i = u_j` (or `u_i = 0`) once
    /// the iterate is resolved to a few ulps: `2 mu max_i (sum_j w_ij + tau_i) e^(q-1)` with
    /// `e = 4 eps ||u||_inf`. Zero for `q >= 2`, where `phi_q` is Lipschitz.
    fn tie_floor(&self, u: &[f64]) -> f64 {
        let q = self.params.q;
        if self.params.mu == 0.0 || q >= 2.0 {
            return 0.0;
        }
        let n = u.len();
        let e = 4.0 * f64::EPSILON * inf_norm(u).max(f64::MIN_POSITIVE);
        let row = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| self.kernel.weight(i, j)).sum::<f64>() + self.kernel.tail()[i])
            .fold(0.0, f64::max);
        2.0 * self.params.mu * row * e.powf(q - 1.0)
    }
}

/// Nonlocal pairs (row-major `n x n`) and exterior tails whose difference changed sign under a
/// Newton step; their curvature is taken from the chord for the rest of the minimization.
struct Ties {
    pairs: Vec<bool>,
    tails: Vec<bool>,
}

impl Ties {
    fn new(obj: &Objective, n: usize) -> Self {
        if obj.params.mu != 0.0 && obj.params.q < 2.0 {
            Ties {
                pairs: vec![false; n * n],
                tails: vec![false; n],
            }
        } else {
            Ties {
                pairs: Vec::new(),
                tails: Vec::new(),
            }
        }
    }

    fn pair(&self, i: usize, j: usize, n: usize) -> bool {
        !self.pairs.is_empty() && self.pairs[i * n + j]
    }

    fn tail(&self, i: usize) -> bool {
        !self.tails.is_empty() && self.tails[i]
    }

    /// Flags every pair and tail whose sign flips between `u` and `u + d`; returns whether any
    /// new flag was set.
    fn mark_crossings(&mut self, u: &[f64], d: &[f64]) -> bool {
        if self.tails.is_empty() {
            return false;
        }
        let n = u.len();
        let mut changed = false;
        for i in 0..n {
            if !self.tails[i] && u[i] * (u[i] + d[i]) < 0.0 {
                self.tails[i] = true;
                changed = true;
            }
            for j in (i + 1)..n {
                let xi = u[i] - u[j];
                if !self.pairs[i * n + j] && xi * (xi + d[i] - d[j]) < 0.0 {
                    self.pairs[i * n + j] = true;
                    self.pairs[j * n + i] = true;
                    changed = true;
                }
            }
        }
        changed
    }
}

/// Nonlocal Hessian coefficients `2 mu w_ij c(u_i - u_j)` and `2 mu tau_i c(u_i)`.
struct PairCoefficient<'a> {
    kernel: &'a NonlocalKernel,
    mu: f64,
    q: f64,
    majorize: bool,
    newton_floor: f64,
    chord_floor: f64,
}

impl<'a> PairCoefficient<'a> {
    fn new(obj: &'a Objective, u: &[f64], majorize: bool) -> Self {
        let scale = obj.floor_scale(u);
        PairCoefficient {
            kernel: obj.kernel,
            mu: obj.params.mu,
            q: obj.params.q,
            majorize,
            newton_floor: 1e-8 * scale,
            chord_floor: 1e-20 * scale,
        }
    }

    fn slope(&self, xi: f64, tied: bool) -> f64 {
        let q = self.q;
        if q == 2.0 {
            return 1.0;
        }
        let a = xi.abs();
        if q > 2.0 {
            return (q - 1.0) * a.powf(q - 2.0);
        }
        if self.majorize || tied {
            a.max(self.chord_floor).powf(q - 2.0)
        } else {
            (q - 1.0) * a.max(self.newton_floor).powf(q - 2.0)
        }
    }

    fn pair(&self, i: usize, j: usize, xi: f64, tied: bool) -> f64 {
        2.0 * self.mu * self.kernel.weight(i, j) * self.slope(xi, tied)
    }

    fn tail(&self, i: usize, x: f64, tied: bool) -> f64 {
        2.0 * self.mu * self.kernel.tail()[i] * self.slope(x, tied)
    }
}

/// Above this size the pair coefficients are recomputed inside each product.
const DENSE_PAIR_LIMIT: usize = 2048;

struct Curvature {
    diag: Vec<f64>,
    /// Coupling of nodes `i-1` and `i` through face `i` (faces `0..=n`).
    faces: Vec<f64>,
    /// Row-major nonlocal coupling coefficients (positive; enter with a minus sign).
    pair: Vec<f64>,
    majorize: bool,
}

impl Curvature {
    fn dense(&self, shift: f64) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i] + shift;
            if i + 1 < n {
                m[(i, i + 1)] -= self.faces[i + 1];
                m[(i + 1, i)] -= self.faces[i + 1];
            }
        }
        if !self.pair.is_empty() {
            for i in 0..n {
                for j in 0..n {
                    if j != i {
                        m[(i, j)] -= self.pair[i * n + j];
                    }
                }
            }
        }
        m
    }

    fn apply(&self, obj: &Objective, u: &[f64], ties: &Ties, v: &[f64], shift: f64) -> Vec<f64> {
        let n = v.len();
        let mut out: Vec<f64> = (0..n).map(|i| (self.diag[i] + shift) * v[i]).collect();
        for i in 0..n.saturating_sub(1) {
            out[i] -= self.faces[i + 1] * v[i + 1];
            out[i + 1] -= self.faces[i + 1] * v[i];
        }
        if obj.params.mu != 0.0 {
            if !self.pair.is_empty() {
                for i in 0..n {
                    let row = &self.pair[i * n..(i + 1) * n];
                    out[i] -= row.iter().zip(v).map(|(c, x)| c * x).sum::<f64>();
                }
            } else {
                // recompute the couplings on the fly
                let coeff = PairCoefficient::new(obj, u, self.majorize);
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..n {
                        if j != i {
                            acc += coeff.pair(i, j, u[i] - u[j], ties.pair(i, j, n)) * v[j];
                        }
                    }
                    out[i] -= acc;
                }
            }
        }
        out
    }
}

/// Solves `H d = -r` for the Newton direction; `None` if the solve breaks down.
fn newton_direction(
    obj: &Objective,
    u: &[f64],
    ties: &Ties,
    curv: &Curvature,
    r: &[f64],
    dense_limit: usize,
) -> Option<Vec<f64>> {
    let n = u.len();
    let dmax = curv.diag.iter().fold(0.0f64, |m, &d| m.max(d.abs()));
    let mut shift = 0.0;
    for _ in 0..12 {
        let d = if n <= dense_limit {
            curv.dense(shift).cholesky().map(|c| {
                let rhs = DVector::from_iterator(n, r.iter().map(|x| -x));
                c.solve(&rhs).iter().copied().collect::<Vec<f64>>()
            })
        } else {
            conjugate_gradient(obj, u, ties, curv, r, shift)
        };
        match d {
            Some(d) if d.iter().all(|x| x.is_finite()) => return Some(d),
            _ => shift = (10.0 * shift).max(1e-12 * dmax.max(1e-300)),
        }
    }
    None
}

fn conjugate_gradient(
    obj: &Objective,
    u: &[f64],
    ties: &Ties,
    curv: &Curvature,
    r: &[f64],
    shift: f64,
) -> Option<Vec<f64>> {
    let n = r.len();
    let pre: Vec<f64> = curv
        .diag
        .iter()
        .map(|&d| if d + shift > 0.0 { 1.0 / (d + shift) } else { 1.0 })
        .collect();
    let b: Vec<f64> = r.iter().map(|x| -x).collect();
    let bnorm = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    let mut res = b.clone();
    let mut z: Vec<f64> = res.iter().zip(&pre).map(|(a, p)| a * p).collect();
    let mut dir = z.clone();
    let mut rz: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..(4 * n).max(50) {
        if res.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-13 * bnorm {
            break;
        }
        let hd = curv.apply(obj, u, ties, &dir, shift);
        let dhd: f64 = dir.iter().zip(&hd).map(|(a, b)| a * b).sum();
        if !(dhd > 0.0) {
            return None;
        }
        let alpha = rz / dhd;
        for i in 0..n {
            x[i] += alpha * dir[i];
            res[i] -= alpha * hd[i];
        }
        z = res.iter().zip(&pre).map(|(a, p)| a * p).collect();
        let rz_new: f64 = res.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            dir[i] = z[i] + beta * dir[i];
        }
    }
    Some(x)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Backtracking line search along `alpha -> point(alpha)`, a curve through `u` with tangent `d`;
/// returns the accepted point with its value and residual.
#[allow(clippy::too_many_arguments)]
fn line_search(
    obj: &Objective,
    value: f64,
    res_norm: f64,
    r: &[f64],
    d: &[f64],
    first_only: bool,
    point: impl Fn(f64) -> Vec<f64>,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    // directional derivative of value, whose gradient is h * r
    let slope = obj.h * r.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    if !(slope < 0.0) {
        return None;
    }
    let negligible = slope.abs() <= 1e-13 * (1.0 + value.abs());
    let mut alpha = 1.0;
    let tries = if first_only { 1 } else { MAX_BACKTRACK };
    for _ in 0..tries {
        let trial = point(alpha);
        if trial.iter().all(|x| x.is_finite()) {
            let v = obj.value(&trial);
            let armijo = v <= value + ARMIJO_C * alpha * slope;
            if armijo || (negligible && v <= value + 1e-13 * (1.0 + value.abs())) {
                let rt = obj.residual(&trial);
                // below roundoff in the objective, progress is judged by the residual
                if armijo && !negligible || inf_norm(&rt) < res_norm {
                    return Some(refine_overshoot(obj, (trial, v, rt), alpha, slope, res_norm, d, &point));
                }
            }
        }
        alpha *= 0.5;
    }
    None
}

/// When the accepted step overshoots the line minimum and the residual barely drops,
/// moves toward the minimum by regula falsi on the directional derivative.
fn refine_overshoot(
    obj: &Objective,
    accepted: (Vec<f64>, f64, Vec<f64>),
    alpha: f64,
    slope: f64,
    res_norm: f64,
    d: &[f64],
    point: &impl Fn(f64) -> Vec<f64>,
) -> (Vec<f64>, f64, Vec<f64>) {
    let deriv = |rt: &[f64]| obj.h * rt.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let mut best_norm = inf_norm(&accepted.2);
    if best_norm <= 0.5 * res_norm {
        return accepted;
    }
    let (mut lo, mut s_lo) = (0.0, slope);
    let (mut hi, mut s_hi) = (alpha, deriv(&accepted.2));
    if !(s_hi > 0.0) {
        return accepted;
    }
    let mut best = accepted;
    for _ in 0..OVERSHOOT_STEPS {
        let a = lo + (hi - lo) * s_lo / (s_lo - s_hi);
        if !(a > lo && a < hi) {
            break;
        }
        let trial = point(a);
        if !trial.iter().all(|x| x.is_finite()) {
            break;
        }
        let rt = obj.residual(&trial);
        let s_a = deriv(&rt);
        let norm = inf_norm(&rt);
        if norm < best_norm {
            best_norm = norm;
            let v = obj.value(&trial);
            best = (trial, v, rt);
        }
        if s_a > 0.0 {
            (hi, s_hi) = (a, s_a);
            s_lo *= 0.5;
        } else {
            (lo, s_lo) = (a, s_a);
            s_hi *= 0.5;
        }
        if best_norm <= 0.5 * res_norm {
            break;
        }
    }
    best
}

fn straight(u: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    u.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

/// Minimizes `J_w` for frozen `w`, starting from `start`.
fn minimize(
    obj: &Objective,
    start: &[f64],
    tol: f64,
    max_iter: usize,
    dense_limit: usize,
) -> Result<InnerSolution> {
    let mut u = start.to_vec();
    let mut value = obj.value(&u);
    let mut r = obj.residual(&u);
    let mut history = vec![value * obj.lambda];
    let mut ties = Ties::new(obj, u.len());
    for it in 0..=max_iter {
        let res_norm = inf_norm(&r);
        if res_norm <= tol.max(obj.tie_floor(&u)) {
            return Ok(InnerSolution {
                u: obj.field(&u),
                iterations: it,
                gradient_norm: res_norm,
                objective_history: history,
            });
        }
        if it == max_iter {
            break;
        }
        let mut step = None;
        // true Newton with a full step first; pairs it would carry across a tie switch to the chord
        let mut direction = None;
        for _ in 0..4 {
            let curv = obj.curvature(&u, false, &ties);
            direction = newton_direction(obj, &u, &ties, &curv, &r, dense_limit);
            match &direction {
                Some(d) if ties.mark_crossings(&u, d) => continue,
                _ => break,
            }
        }
        if let Some(d) = direction {
            if obj.curved() {
                step = line_search(obj, value, res_norm, &r, &d, true, |a| obj.curved_point(&u, &d, a));
            }
            if step.is_none() {
                step = line_search(obj, value, res_norm, &r, &d, true, |a| straight(&u, &d, a));
            }
        }
        if step.is_none() {
            let curv = obj.curvature(&u, true, &ties);
            if let Some(d) = newton_direction(obj, &u, &ties, &curv, &r, dense_limit) {
                step = line_search(obj, value, res_norm, &r, &d, false, |a| straight(&u, &d, a));
            }
        }
        if step.is_none() {
            // scaled steepest descent
            let curv = obj.curvature(&u, true, &ties);
            let d: Vec<f64> = r
                .iter()
                .zip(&curv.diag)
                .map(|(ri, di)| -ri / di.max(1e-300))
                .collect();
            step = line_search(obj, value, res_norm, &r, &d, false, |a| straight(&u, &d, a));
        }
        match step {
            Some((nu, nv, nr)) => {
                u = nu;
                value = nv;
                r = nr;
                history.push(value * obj.lambda);
            }
            None => {
                // no descent direction makes progress: accept if at the roundoff floor
                let floor = (1e-13 * obj.term_scale(&u) * (u.len() as f64).sqrt()).max(obj.tie_floor(&u));
                if res_norm <= floor.max(tol) {
                    return Ok(InnerSolution {
                        u: obj.field(&u),
                        iterations: it,
                        gradient_norm: res_norm,
                        objective_history: history,
                    });
                }
                return Err(Error::InnerNonconvergence {
                    iterations: it,
                    residual: res_norm,
                    last_iterate: u,
                });
            }
        }
    }
    Err(Error::InnerNonconvergence {
        iterations: max_iter,
        residual: inf_norm(&r),
        last_iterate: u,
    })
}

fn inner_tolerance(obj: &Objective, settings: &SolverSettings) -> f64 {
    settings.inner_tol * (1.0 + inf_norm(&obj.load))
}

/// `J_w(u)` for the problem's own flux (no truncation).
pub fn objective_jw(u: &Field, w: &Field, problem: &EllipticProblem) -> Result<f64> {
    problem.validate()?;
    problem.params.grid.check_same(u.grid())?;
    problem.params.grid.check_same(w.grid())?;
    let kernel = problem.params.kernel();
    let obj = Objective::new(problem, &kernel, &problem.params.flux, w);
    Ok(obj.value(u.values()) * obj.lambda)
}

/// Nodal field `beta(u) + lambda (A u - Div f(w) - rhs)`; the gradient of
/// [`objective_jw`] is `h` times this field.
pub fn objective_gradient(u: &Field, w: &Field, problem: &EllipticProblem) -> Result<Field> {
    problem.validate()?;
    problem.params.grid.check_same(u.grid())?;
    problem.params.grid.check_same(w.grid())?;
    let kernel = problem.params.kernel();
    let obj = Objective::new(problem, &kernel, &problem.params.flux, w);
    let r = obj.residual(u.values());
    Ok(Field::from_raw(
        problem.params.grid,
        r.into_iter().map(|x| x * obj.lambda).collect(),
    ))
}

/// Inner minimization of `J_w` for fixed `w`, warm-started at `w`.
pub fn minimize_inner(
    w: &Field,
    problem: &EllipticProblem,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolution> {
    problem.validate()?;
    problem.params.grid.check_same(w.grid())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let kernel = problem.params.kernel();
    let obj = Objective::new(problem, &kernel, &problem.params.flux, w);
    let scaled_tol = tol * (1.0 + inf_norm(&obj.load));
    minimize(&obj, w.values(), scaled_tol, max_iter, SolverSettings::default().dense_limit)
}

/// Solves the resolvent (or stationary) problem by Picard iteration over the convection argument.
pub fn solve_resolvent(
    problem: &EllipticProblem,
    settings: &SolverSettings,
) -> Result<(Field, SolveReport)> {
    problem.validate()?;
    settings.validate()?;
    let grid = problem.params.grid;
    let rhs_inf = problem.rhs.max_abs();
    let bound = problem
        .has_beta()
        .then_some(problem.lambda * rhs_inf);

    if problem.has_beta() && rhs_inf == 0.0 {
        return Ok((
            Field::zeros(grid),
            SolveReport {
                outer_iterations: 1,
                inner_iterations_total: 0,
                final_fixed_point_residual: 0.0,
                final_gradient_norm: 0.0,
                beta_linf: 0.0,
                beta_linf_bound: bound,
                truncation_radius: None,
                fixed_point_history: vec![0.0],
                converged: true,
            },
        ));
    }

    let flux = &problem.params.flux;
    let truncate = problem.has_beta() && settings.truncate_flux && !flux.is_zero();
    let mut radius =
        truncate.then(|| TRUNCATION_MARGIN * problem.params.beta.inv(problem.lambda * rhs_inf));
    for attempt in 0..=TRUNCATION_RETRIES {
        let flux_used = match radius {
            Some(r) => flux.truncate(r)?,
            None => flux.clone(),
        };
        let (u, mut report) = picard(problem, settings, &flux_used)?;
        report.truncation_radius = radius;
        match radius {
            Some(r) if u.max_abs() > r => {
                if attempt == TRUNCATION_RETRIES {
                    return Err(Error::TruncationViolated {
                        radius: r,
                        max_abs: u.max_abs(),
                    });
                }
                radius = Some(2.0 * r);
            }
            _ => return Ok((u, report)),
        }
    }
    unreachable!("loop returns on the last attempt")
}

fn picard(
    problem: &EllipticProblem,
    settings: &SolverSettings,
    flux: &crate::nonlinearities::FluxSpec,
) -> Result<(Field, SolveReport)> {
    let kernel = problem.params.kernel();
    let p = problem.params.p;
    let frozen = flux.is_zero();
    let mut w = problem.w0.clone();
    let mut guess = problem.w0.values().to_vec();
    let mut theta: f64 = 1.0;
    let mut history = Vec::new();
    let mut inner_total = 0;
    for k in 0..settings.max_outer {
        let obj = Objective::new(problem, &kernel, flux, &w);
        let tol = inner_tolerance(&obj, settings);
        let inner = minimize(&obj, &guess, tol, settings.max_inner, settings.dense_limit)?;
        inner_total += inner.iterations;
        let u = inner.u;
        let diff = u.zip_map(&w, |a, b| a - b)?;
        let res = grid::w1p_pow(&diff, p).powf(1.0 / p);
        let unorm = grid::w1p_pow(&u, p).powf(1.0 / p);
        history.push(res);
        if frozen || res <= settings.fp_tol * (1.0 + unorm) {
            let beta_linf = if problem.has_beta() {
                u.values()
                    .iter()
                    .fold(0.0f64, |m, &x| m.max(problem.params.beta.eval(x).abs()))
            } else {
                0.0
            };
            let report = SolveReport {
                outer_iterations: k + 1,
                inner_iterations_total: inner_total,
                final_fixed_point_residual: if frozen { 0.0 } else { res },
                final_gradient_norm: inner.gradient_norm,
                beta_linf,
                beta_linf_bound: problem
                    .has_beta()
                    .then(|| problem.lambda * problem.rhs.max_abs()),
                truncation_radius: None,
                fixed_point_history: history,
                converged: true,
            };
            return Ok((u, report));
        }
        if k > 0 && res > history[k - 1] {
            theta = (theta * 0.5).max(1.0 / 64.0);
        }
        guess = u.values().to_vec();
        w = w.zip_map(&u, |a, b| (1.0 - theta) * a + theta * b)?;
    }
    Err(Error::OuterNonconvergence {
        history,
        last_iterate: w.into_values(),
    })
}

/// Stationary problem `A_mu u = Div f(u) + rhs`.
pub fn solve_stationary(
    params: &ModelParams,
    rhs: &Field,
    settings: &SolverSettings,
) -> Result<(Field, SolveReport)> {
    let problem = EllipticProblem::stationary(params.clone(), rhs.clone())?;
    solve_resolvent(&problem, settings)
}

/// Stationary solve warm-started at `w0`.
pub fn solve_stationary_from(
    params: &ModelParams,
    rhs: &Field,
    w0: &Field,
    settings: &SolverSettings,
) -> Result<(Field, SolveReport)> {
    let problem = EllipticProblem::stationary(params.clone(), rhs.clone())?.with_start(w0.clone())?;
    solve_resolvent(&problem, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::nonlinearities::{BetaSpec, FluxSpec, SourceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(p: f64, q: f64, mu: f64, m: f64, flux: FluxSpec, n: usize) -> ModelParams {
        ModelParams::new(
            p,
            q,
            0.5,
            mu,
            BetaSpec::power(m).unwrap(),
            flux,
            SourceSpec::Zero,
            Grid::new(0.0, 1.0, n).unwrap(),
        )
        .unwrap()
    }

    fn random(grid: Grid, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
        Field::new(grid, (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let prm = params(3.0, 1.5, 1.0, 2.0, FluxSpec::power(1.0, 1.0).unwrap(), 16);
        let g = prm.grid;
        let pb = EllipticProblem::resolvent(prm.clone(), 0.1, Field::zeros(g)).unwrap();
        let (u, rep) = solve_resolvent(&pb, &SolverSettings::default()).unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(rep.outer_iterations, 1);
        assert_eq!(objective_jw(&u, &u, &pb).unwrap(), 0.0);

        let (u, _) = solve_stationary(&params(3.0, 2.0, 1.0, 1.0, FluxSpec::Zero, 16), &Field::zeros(g), &SolverSettings::default()).unwrap();
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn zero_flux_needs_one_outer_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prm = params(3.0, 1.5, 1.0, 2.0, FluxSpec::Zero, 20);
        let rhs = random(prm.grid, &mut rng, -2.0, 2.0);
        let pb = EllipticProblem::resolvent(prm, 0.05, rhs).unwrap();
        let (_, rep) = solve_resolvent(&pb, &SolverSettings::default()).unwrap();
        assert_eq!(rep.outer_iterations, 1);
        assert!(rep.converged);
        assert!(rep.linf_bound_holds());
    }

    #[test]
    fn residual_oracle_small_lambda() {
        // beta = id, mu = 0, f = 0: u/lambda + (-Delta_p u) = rhs, so lambda*rhs is u to O(lambda)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=8 {
            let prm = params(3.0, 2.0, 0.0, 1.0, FluxSpec::Zero, n);
            let rhs = random(prm.grid, &mut rng, 0.5, 1.5);
            let lambda = 1e-3;
            let pb = EllipticProblem::resolvent(prm.clone(), lambda, rhs.clone()).unwrap();
            let (u, _) = solve_resolvent(&pb, &SolverSettings::default()).unwrap();
            // independent residual evaluation
            let h = prm.grid.h();
            let v = u.values();
            let ext = |i: isize| if i < 0 || i as usize >= n { 0.0 } else { v[i as usize] };
            for i in 0..n {
                let dl = (ext(i as isize) - ext(i as isize - 1)) / h;
                let dr = (ext(i as isize + 1) - ext(i as isize)) / h;
                let plap = -(dr.abs() * dr - dl.abs() * dl) / h;
                let res = v[i] / lambda + plap - rhs.values()[i];
                assert!(res.abs() < 1e-8 * (1.0 + rhs.values()[i].abs() / lambda), "n={n} res={res}");
                let approx = lambda * rhs.values()[i];
                assert!((v[i] - approx).abs() < 50.0 * lambda * approx.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prm = params(3.0, 1.5, 1.0, 2.0, FluxSpec::power(1.0, 1.0).unwrap(), 24);
        let g = prm.grid;
        let pb = EllipticProblem::resolvent(prm, 0.07, random(g, &mut rng, -1.0, 1.0)).unwrap();
        for _ in 0..10 {
            let u = random(g, &mut rng, 0.2, 1.0);
            let w = random(g, &mut rng, -1.0, 1.0);
            let d = random(g, &mut rng, -1.0, 1.0);
            let t = 1e-6;
            let plus = u.zip_map(&d, |a, b| a + t * b).unwrap();
            let minus = u.zip_map(&d, |a, b| a - t * b).unwrap();
            let fd = (objective_jw(&plus, &w, &pb).unwrap() - objective_jw(&minus, &w, &pb).unwrap()) / (2.0 * t);
            let grad = objective_gradient(&u, &w, &pb).unwrap();
            let exact = operators::duality_pairing(&grad, &d).unwrap();
            assert!((fd - exact).abs() < 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
        }
    }

    #[test]
    fn coercivity_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prm = params(2.5, 1.5, 0.5, 1.5, FluxSpec::power(1.0, 1.0).unwrap(), 16);
        let g = prm.grid;
        let lambda = 0.3;
        let pb = EllipticProblem::resolvent(prm.clone(), lambda, random(g, &mut rng, -1.0, 1.0)).unwrap();
        for _ in 0..20 {
            let u = random(g, &mut rng, -3.0, 3.0);
            let w = random(g, &mut rng, -1.0, 1.0);
            let jw = objective_jw(&u, &w, &pb).unwrap();
            let fw_inf = w.values().iter().fold(0.0f64, |m, &x| m.max(prm.flux.eval(x).abs()));
            let lower = lambda * operators::energy_j(&u, &prm).unwrap()
                - lambda * pb.rhs.max_abs() * grid::lp_norm(&u, 1.0).unwrap()
                - lambda * fw_inf * g.h() * grid::face_slopes(&u).iter().map(|d| d.abs()).sum::<f64>();
            assert!(jw >= lower - 1e-10 * (1.0 + lower.abs()), "{jw} < {lower}");
        }
    }

    #[test]
    fn inner_descent_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prm = params(3.0, 1.5, 0.0, 2.0, FluxSpec::Zero, 32);
        let g = prm.grid;
        let rhs = random(g, &mut rng, 0.0, 3.0);
        let pb = EllipticProblem::resolvent(prm, 0.2, rhs).unwrap();
        let start = random(g, &mut rng, -2.0, 2.0);
        let sol = minimize_inner(&start, &pb, 1e-10, 200).unwrap();
        assert!(sol.u.values().iter().all(|&x| x >= -1e-10));
        let hist = &sol.objective_history;
        assert!(hist.len() > 2);
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()), "{hist:?}");
        }
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn resolvent_bound_and_uniqueness() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (m, mu, flux) in [
            (1.0, 0.0, FluxSpec::Zero),
            (2.0, 1.0, FluxSpec::Zero),
            (1.5, 1.0, FluxSpec::power(1.0, 1.0).unwrap()),
        ] {
            let prm = params(3.0, 1.5, mu, m, flux.clone(), 24);
            let g = prm.grid;
            let rhs = random(g, &mut rng, -3.0, 3.0);
            let lambda = rng.gen_range(0.01..0.1);
            let settings = SolverSettings::default();
            let pb = EllipticProblem::resolvent(prm.clone(), lambda, rhs.clone()).unwrap();
            let (u1, r1) = solve_resolvent(&pb, &settings).unwrap();
            assert!(r1.linf_bound_holds(), "{r1:?}");
            let pb2 = pb.clone().with_start(random(g, &mut rng, -1.0, 1.0)).unwrap();
            let (u2, _) = solve_resolvent(&pb2, &settings).unwrap();
            let diff = u1.zip_map(&u2, |a, b| a - b).unwrap();
            let d = grid::w1p_seminorm(&diff, 3.0).unwrap();
            let scale = 1.0 + grid::w1p_seminorm(&u1, 3.0).unwrap();
            assert!(d <= 10.0 * settings.fp_tol * scale, "m={m} d={d}");
        }
    }

    #[test]
    fn monotone_in_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prm = params(3.0, 1.5, 1.0, 2.0, FluxSpec::Zero, 24);
        let g = prm.grid;
        for _ in 0..5 {
            let h1 = random(g, &mut rng, -2.0, 2.0);
            let h2 = h1.zip_map(&random(g, &mut rng, 0.0, 1.0), |a, b| a + b).unwrap();
            let s = SolverSettings::default();
            let (u1, _) = solve_resolvent(&EllipticProblem::resolvent(prm.clone(), 0.05, h1).unwrap(), &s).unwrap();
            let (u2, _) = solve_resolvent(&EllipticProblem::resolvent(prm.clone(), 0.05, h2).unwrap(), &s).unwrap();
            for (a, b) in u1.values().iter().zip(u2.values()) {
                assert!(*a <= b + 1e-8);
            }
        }
    }

    #[test]
    fn stationary_sign_and_comparison() {
        let prm = params(3.0, 2.0, 1.0, 1.0, FluxSpec::Zero, 32);
        let g = prm.grid;
        let h = Field::from_fn(g, |x| crate::nonlinearities::smooth_bump(x, 2.0, 0.5, 0.3));
        let s = SolverSettings::default();
        let (u1, rep) = solve_stationary(&prm, &h, &s).unwrap();
        assert!(rep.converged);
        assert!(u1.values().iter().all(|&x| x >= -1e-10));
        let (u2, _) = solve_stationary(&prm, &h.scale(2.0), &s).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            assert!(*a <= *b + 1e-10);
        }
        let k = prm.kernel();
        let au = operators::apply_a_mu(&u1, &prm, &k).unwrap();
        let res: f64 = g.h() * au.values().iter().zip(h.values()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(res < 1e-8, "{res}");
    }

    #[test]
    fn matrix_free_path_agrees_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prm = params(3.0, 1.5, 1.0, 2.0, FluxSpec::Zero, 40);
        let rhs = random(prm.grid, &mut rng, -2.0, 2.0);
        let pb = EllipticProblem::resolvent(prm, 0.05, rhs).unwrap();
        let dense = solve_resolvent(&pb, &SolverSettings::default()).unwrap().0;
        let cg = SolverSettings {
            dense_limit: 8,
            ..SolverSettings::default()
        };
        let free = solve_resolvent(&pb, &cg).unwrap().0;
        for (a, b) in dense.values().iter().zip(free.values()) {
            assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let prm = params(3.0, 1.5, 1.0, 2.0, FluxSpec::Zero, 4);
        assert!(EllipticProblem::resolvent(prm.clone(), 0.0, Field::zeros(prm.grid)).is_err());
        let other = Grid::new(0.0, 1.0, 5).unwrap();
        assert!(matches!(
            EllipticProblem::resolvent(prm.clone(), 0.1, Field::zeros(other)),
            Err(Error::Dimension(_))
        ));
        let pb = EllipticProblem::resolvent(prm.clone(), 0.1, Field::from_fn(prm.grid, |_| 1.0)).unwrap();
        let s = SolverSettings {
            max_inner: 1,
            inner_tol: 1e-15,
            ..SolverSettings::default()
        };
        let err = solve_resolvent(&pb, &s).unwrap_err();
        assert!(matches!(err, Error::InnerNonconvergence { .. }), "{err}");
        assert!(err.is_solver_failure());
    }
}
