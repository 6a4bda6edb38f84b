//! Discrete realizations of `-Delta_p`, `mu (-Delta)_q^s`, `Div f(u)`, their sum `A_mu`,
//! the duality pairing and the energy functionals.
//!
//! Sums over nodes run in ascending index order (and over `j` ascending inside each
//! node), so every operator is bitwise reproducible. The nonlocal sum is split
//! across output nodes with rayon for large grids; each node's reduction order is
//! unchanged by the split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{self, Field, Grid};
use crate::nonlinearities::{BetaSpec, FluxSpec, SourceSpec};

/// Grid size above which the nonlocal sum is parallelized over output nodes.
const PAR_THRESHOLD: usize = 256;

/// All parameters of the continuous problem together with the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub mu: f64,
    pub beta: BetaSpec,
    pub flux: FluxSpec,
    pub source: SourceSpec,
    pub grid: Grid,
}

impl ModelParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: f64,
        q: f64,
        s: f64,
        mu: f64,
        beta: BetaSpec,
        flux: FluxSpec,
        source: SourceSpec,
        grid: Grid,
    ) -> Result<Self> {
        let params = ModelParams {
            p,
            q,
            s,
            mu,
            beta,
            flux,
            source,
            grid,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 2.0) || !self.p.is_finite() {
            return Err(Error::InvalidExponent(format!("need p > 2, got {}", self.p)));
        }
        grid::check_fractional_exponents(self.s, self.q)?;
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("need mu >= 0, got {}", self.mu)));
        }
        Ok(())
    }

    /// Nonlocal kernel on this grid.
    pub fn kernel(&self) -> NonlocalKernel {
        NonlocalKernel::new(self.grid, self.s, self.q).expect("exponents validated")
    }
}

#[inline]
pub(crate) fn phi(xi: f64, p: f64) -> f64 {
    if xi == 0.0 {
        0.0
    } else if p == 2.0 {
        xi
    } else if p == 3.0 {
        xi.abs() * xi
    } else {
        xi.abs().powf(p - 2.0) * xi
    }
}

/// `(-Delta_p u)_i = -(Phi_p(D_{i+1/2}) - Phi_p(D_{i-1/2})) / h`.
pub fn apply_p_laplacian(u: &Field, p: f64) -> Field {
    let h = u.grid().h();
    let fluxes: Vec<f64> = grid::face_slopes(u).into_iter().map(|d| phi(d, p)).collect();
    let vals = (0..u.len()).map(|i| -(fluxes[i + 1] - fluxes[i]) / h).collect();
    Field::from_raw(*u.grid(), vals)
}

/// Quadrature of the singular kernel on a uniform grid.
///
/// `w_ij = h / |x_i - x_j|^(1+sq)` depends only on `|i - j|`, so one row is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlocalKernel {
    grid: Grid,
    s: f64,
    q: f64,
    by_offset: Vec<f64>,
    tail: Vec<f64>,
}

impl NonlocalKernel {
    pub fn new(grid: Grid, s: f64, q: f64) -> Result<Self> {
        grid::check_fractional_exponents(s, q)?;
        let sq = s * q;
        let n = grid.len();
        let mut by_offset = vec![0.0; n];
        for (d, w) in by_offset.iter_mut().enumerate().skip(1) {
            *w = grid.pair_weight(0, d, sq);
        }
        let tail = (0..n).map(|i| grid.exterior_tail(i, sq)).collect();
        Ok(NonlocalKernel {
            grid,
            s,
            q,
            by_offset,
            tail,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// `w_ij`, zero on the diagonal.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.by_offset[i.abs_diff(j)]
    }

    /// Exterior factors `tau_i = [(x_i-a)^(-sq) + (b-x_i)^(-sq)] / (sq)`.
    pub fn tail(&self) -> &[f64] {
        &self.tail
    }

    /// Dense `n x n` weight matrix, row-major.
    pub fn weights_matrix(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.weight(i, j);
            }
        }
        m
    }

    fn node_value(&self, v: &[f64], i: usize) -> f64 {
        let q = self.q;
        let ui = v[i];
        let mut acc = 0.0;
        for (j, &uj) in v.iter().enumerate() {
            if j != i {
                acc += self.by_offset[i.abs_diff(j)] * phi(ui - uj, q);
            }
        }
        2.0 * acc + 2.0 * self.tail[i] * phi(ui, q)
    }

    /// `h sum_{i != j} w_ij |u_i - u_j|^q + 2 h sum tau_i |u_i|^q`, the discrete Gagliardo energy.
    pub(crate) fn energy(&self, v: &[f64]) -> f64 {
        let q = self.q;
        let n = v.len();
        let mut interior = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                interior += self.by_offset[j - i] * (v[i] - v[j]).abs().powf(q);
            }
        }
        let tail: f64 = (0..n).map(|i| self.tail[i] * v[i].abs().powf(q)).sum();
        2.0 * self.grid.h() * (interior + tail)
    }
}

/// `((-Delta)_q^s u)_i = 2 sum_{j != i} w_ij Phi_q(u_i - u_j) + 2 tau_i Phi_q(u_i)`.
pub fn apply_frac_q_laplacian(u: &Field, kernel: &NonlocalKernel) -> Result<Field> {
    kernel.grid.check_same(u.grid())?;
    let v = u.values();
    let vals = if v.len() >= PAR_THRESHOLD {
        (0..v.len()).into_par_iter().map(|i| kernel.node_value(v, i)).collect()
    } else {
        (0..v.len()).map(|i| kernel.node_value(v, i)).collect()
    };
    Ok(Field::from_raw(*u.grid(), vals))
}

/// Central conservative `(f(u_{i+1}) - f(u_{i-1})) / (2h)` with zero boundary values.
pub fn apply_divergence_flux(u: &Field, flux: &FluxSpec) -> Field {
    let h = u.grid().h();
    let n = u.len() as isize;
    let f: Vec<f64> = (-1..=n).map(|i| flux.eval(u.ext(i))).collect();
    // f[k] holds f at node index k - 1
    let vals = (0..u.len()).map(|i| (f[i + 2] - f[i]) / (2.0 * h)).collect();
    Field::from_raw(*u.grid(), vals)
}

/// `A_mu u = -Delta_p u + mu (-Delta)_q^s u`.
pub fn apply_a_mu(u: &Field, params: &ModelParams, kernel: &NonlocalKernel) -> Result<Field> {
    params.grid.check_same(u.grid())?;
    let mut out = apply_p_laplacian(u, params.p);
    if params.mu != 0.0 {
        let frac = apply_frac_q_laplacian(u, kernel)?;
        out = out.zip_map(&frac, |a, b| a + params.mu * b)?;
    }
    Ok(out)
}

/// `h sum_i (Au)_i phi_i`.
pub fn duality_pairing(au: &Field, phi: &Field) -> Result<f64> {
    au.grid().check_same(phi.grid())?;
    Ok(pairing(au.values(), phi.values(), au.grid().h()))
}

pub(crate) fn pairing(a: &[f64], b: &[f64], h: f64) -> f64 {
    h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// `h sum_i (Div f(u))_i u_i`; vanishes identically for `f = 0`.
pub fn convection_pairing(u: &Field, flux: &FluxSpec) -> f64 {
    let d = apply_divergence_flux(u, flux);
    pairing(d.values(), u.values(), u.grid().h())
}

/// `J(u) = (1/p) ||grad u||_p^p + (mu/q) ||u||_{W^{s,q}}^q`.
pub fn energy_j(u: &Field, params: &ModelParams) -> Result<f64> {
    params.grid.check_same(u.grid())?;
    let mut j = grid::w1p_pow(u, params.p) / params.p;
    if params.mu != 0.0 {
        j += params.mu / params.q * grid::wsq_pow(u, params.s, params.q);
    }
    Ok(j)
}

/// Same as [`energy_j`] but reusing a prebuilt kernel.
pub(crate) fn energy_j_with(u: &Field, params: &ModelParams, kernel: &NonlocalKernel) -> f64 {
    let mut j = grid::w1p_pow(u, params.p) / params.p;
    if params.mu != 0.0 {
        j += params.mu / params.q * kernel.energy(u.values());
    }
    j
}

fn source_exponent(source: &SourceSpec) -> Result<Option<f64>> {
    match source {
        SourceSpec::Zero => Ok(None),
        SourceSpec::Power { r } => Ok(Some(*r)),
        other => Err(Error::UnsupportedFunctional(format!(
            "energy needs the power source |u|^(r-1)u, got {other:?}"
        ))),
    }
}

/// `E(u) = J(u) - (1/(r+1)) ||u||_{r+1}^{r+1}`; equals `J` for a zero source.
pub fn energy_e(u: &Field, params: &ModelParams) -> Result<f64> {
    let r = source_exponent(&params.source)?;
    let j = energy_j(u, params)?;
    Ok(match r {
        Some(r) => j - grid::lp_norm_pow(u, r + 1.0)? / (r + 1.0),
        None => j,
    })
}

/// Value of `I(u)` and the constant `c_eps = 1 - p / ((r+1)(1-eps))`.
pub fn energy_i(u: &Field, params: &ModelParams, epsilon: f64) -> Result<(f64, f64)> {
    params.grid.check_same(u.grid())?;
    let r = source_exponent(&params.source)?.ok_or_else(|| {
        Error::UnsupportedFunctional("I(u) needs the power source |u|^(r-1)u".into())
    })?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon(format!("need eps in (0,1), got {epsilon}")));
    }
    let c_eps = 1.0 - params.p / ((r + 1.0) * (1.0 - epsilon));
    if !(c_eps > 0.0) {
        return Err(Error::InvalidEpsilon(format!(
            "c_eps = {c_eps} <= 0 for eps = {epsilon}, p = {}, r = {r}",
            params.p
        )));
    }
    let lead = (1.0 - epsilon) / params.p;
    let mut val = lead * grid::w1p_pow(u, params.p) - grid::lp_norm_pow(u, r + 1.0)? / (r + 1.0);
    if params.mu != 0.0 {
        val += params.mu * lead * grid::wsq_pow(u, params.s, params.q);
    }
    Ok((val, c_eps))
}

/// Empirical constants of the two algebraic inequalities of the vector field `Phi_p`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AlgebraicReport {
    pub p: f64,
    pub trials: usize,
    /// `max |Phi(x) - Phi(y)| / (|x - y| (|x| + |y|)^(p-2))`.
    pub c1: f64,
    /// `min (Phi(x) - Phi(y))(x - y) / |x - y|^p`.
    pub c2: f64,
    pub holds: bool,
}

/// Samples random scalar pairs and measures the best constants `c1`, `c2`.
pub fn check_algebraic_inequalities(p: f64, trials: usize, seed: u64) -> Result<AlgebraicReport> {
    if !(p >= 2.0) {
        return Err(Error::InvalidExponent(format!("need p >= 2, got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut c1, mut c2) = (0.0f64, f64::INFINITY);
    for _ in 0..trials {
        let x: f64 = rng.gen_range(-10.0..10.0);
        let y: f64 = rng.gen_range(-10.0..10.0);
        let d = x - y;
        if d == 0.0 {
            continue;
        }
        let dphi = phi(x, p) - phi(y, p);
        c1 = c1.max(dphi.abs() / (d.abs() * (x.abs() + y.abs()).powf(p - 2.0)));
        c2 = c2.min(dphi * d / d.abs().powf(p));
    }
    Ok(AlgebraicReport {
        p,
        trials,
        c1,
        c2,
        holds: c1.is_finite() && c1 > 0.0 && c2 > 0.0 && c2.is_finite(),
    })
}
