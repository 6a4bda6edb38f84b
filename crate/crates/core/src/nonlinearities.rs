//! Structural nonlinearities: the time nonlinearity `beta`, the convective flux `f`
//! and the source `g`, with their truncations and the monotone split of `f`.
//!
//! The built-in families are power laws,
//! `beta(t) = |t|^(1/m - 1) t`, `f(u) = c |u|^(gamma+1)`, `g(u) = |u|^(r-1) u`.
//! Tables are accepted for all three; a `beta` table must be strictly increasing and
//! is extended as an odd function.

use crate::error::{Error, Result};
use crate::operators::ModelParams;

/// Smooth compactly supported bump `A exp(1 - 1/(1 - ((x-c)/w)^2))`, zero outside `|x - c| < w`.
pub fn smooth_bump(x: f64, amplitude: f64, center: f64, width: f64) -> f64 {
    let z = (x - center) / width;
    if z.abs() >= 1.0 {
        0.0
    } else {
        amplitude * (1.0 - 1.0 / (1.0 - z * z)).exp()
    }
}

// ---------------------------------------------------------------------------
// beta
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum BetaSpec {
    /// `beta(t) = |t|^(1/m - 1) t`, `m >= 1`.
    Power { m: f64 },
    /// Monotone cubic (Fritsch-Carlson) interpolant through knots on `t >= 0`, odd extension.
    Table(MonotoneTable),
}

impl BetaSpec {
    pub fn power(m: f64) -> Result<Self> {
        if !(m >= 1.0) || !m.is_finite() {
            return Err(Error::InvalidParameter(format!("beta.m must be >= 1, got {m}")));
        }
        Ok(BetaSpec::Power { m })
    }

    pub fn table(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        Ok(BetaSpec::Table(MonotoneTable::new(t, v)?))
    }

    /// Exponent `m` of the power family, `None` for tables.
    pub fn m(&self) -> Option<f64> {
        match self {
            BetaSpec::Power { m } => Some(*m),
            BetaSpec::Table(_) => None,
        }
    }

    /// Local Hoelder exponent `min(1, 1/m)`; tables are treated as Lipschitz.
    pub fn holder_alpha(&self) -> f64 {
        match self {
            BetaSpec::Power { m } => (1.0 / m).min(1.0),
            BetaSpec::Table(_) => 1.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            BetaSpec::Power { m } => {
                if *m == 1.0 {
                    t
                } else {
                    t.signum() * t.abs().powf(1.0 / m)
                }
            }
            BetaSpec::Table(tab) => t.signum() * tab.eval(t.abs()),
        }
    }

    pub fn inv(&self, v: f64) -> f64 {
        match self {
            BetaSpec::Power { m } => {
                if *m == 1.0 {
                    v
                } else {
                    v.signum() * v.abs().powf(*m)
                }
            }
            BetaSpec::Table(tab) => v.signum() * tab.inverse(v.abs()),
        }
    }

    /// `B(t) = int_0^t beta(s) ds`.
    pub fn primitive(&self, t: f64) -> f64 {
        match self {
            BetaSpec::Power { m } => {
                let e = 1.0 + 1.0 / m;
                t.abs().powf(e) / e
            }
            BetaSpec::Table(tab) => tab.integral(t.abs()),
        }
    }

    /// `beta'(t)`; infinite at `t = 0` when `m > 1`.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            BetaSpec::Power { m } => {
                if *m == 1.0 {
                    1.0
                } else {
                    t.abs().powf(1.0 / m - 1.0) / m
                }
            }
            BetaSpec::Table(tab) => tab.derivative(t.abs()),
        }
    }

    /// Constant `C_K` in `beta(t) - beta(t') >= C_K (t - t')` on `[-K, K]`.
    pub fn lower_slope(&self, k: f64) -> f64 {
        match self {
            BetaSpec::Power { m } => k.powf(1.0 / m - 1.0) / m,
            BetaSpec::Table(tab) => {
                let samples = 2000;
                (0..=samples)
                    .map(|i| tab.derivative(k * i as f64 / samples as f64))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Strictly increasing monotone cubic Hermite interpolant on `[0, inf)`, starting at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneTable {
    t: Vec<f64>,
    v: Vec<f64>,
    slopes: Vec<f64>,
}

const TABLE_INVERSE_TOL: f64 = 1e-12;

impl MonotoneTable {
    pub fn new(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if t.len() != v.len() || t.len() < 2 {
            return Err(Error::InvalidParameter(
                "beta table needs at least two knots with matching lengths".into(),
            ));
        }
        if t[0] != 0.0 || v[0] != 0.0 {
            return Err(Error::InvalidParameter("beta table must start at (0, 0)".into()));
        }
        let increasing = |xs: &[f64]| xs.windows(2).all(|w| w[1] > w[0] && w[1].is_finite());
        if !increasing(&t) || !increasing(&v) {
            return Err(Error::InvalidParameter(
                "beta table knots and values must be strictly increasing".into(),
            ));
        }
        let k = t.len();
        let secant: Vec<f64> = (0..k - 1).map(|i| (v[i + 1] - v[i]) / (t[i + 1] - t[i])).collect();
        let mut slopes = vec![0.0; k];
        slopes[0] = secant[0];
        slopes[k - 1] = secant[k - 2];
        for i in 1..k - 1 {
            // weighted harmonic mean keeps the interpolant monotone
            let (h0, h1) = (t[i] - t[i - 1], t[i + 1] - t[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            slopes[i] = (w1 + w2) / (w1 / secant[i - 1] + w2 / secant[i]);
        }
        Ok(MonotoneTable { t, v, slopes })
    }

    fn segment(&self, x: f64) -> usize {
        match self.t.partition_point(|&k| k <= x) {
            0 => 0,
            i => (i - 1).min(self.t.len() - 2),
        }
    }

    fn hermite(&self, i: usize, x: f64) -> (f64, f64) {
        let (t0, t1) = (self.t[i], self.t[i + 1]);
        let dt = t1 - t0;
        let s = (x - t0) / dt;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let val = h00 * self.v[i] + h10 * dt * self.slopes[i] + h01 * self.v[i + 1]
            + h11 * dt * self.slopes[i + 1];
        let d00 = 6.0 * s2 - 6.0 * s;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = -6.0 * s2 + 6.0 * s;
        let d11 = 3.0 * s2 - 2.0 * s;
        let der = (d00 * self.v[i] + d01 * self.v[i + 1]) / dt
            + d10 * self.slopes[i]
            + d11 * self.slopes[i + 1];
        (val, der)
    }

    fn last(&self) -> (f64, f64, f64) {
        let k = self.t.len() - 1;
        (self.t[k], self.v[k], self.slopes[k])
    }

    fn eval(&self, x: f64) -> f64 {
        let (tl, vl, dl) = self.last();
        if x >= tl {
            return vl + dl * (x - tl);
        }
        self.hermite(self.segment(x), x).0
    }

    fn derivative(&self, x: f64) -> f64 {
        let (tl, _, dl) = self.last();
        if x >= tl {
            return dl;
        }
        self.hermite(self.segment(x), x).1
    }

    fn inverse(&self, y: f64) -> f64 {
        let (tl, vl, dl) = self.last();
        if y >= vl {
            return tl + (y - vl) / dl;
        }
        let i = match self.v.partition_point(|&k| k <= y) {
            0 => 0,
            j => (j - 1).min(self.v.len() - 2),
        };
        let (mut lo, mut hi) = (self.t[i], self.t[i + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.hermite(i, mid).0 < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= TABLE_INVERSE_TOL * hi.max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// `int_0^x` of the interpolant; Simpson's rule is exact on each cubic piece.
    fn integral(&self, x: f64) -> f64 {
        let simpson = |i: usize, a: f64, b: f64| {
            let fa = self.hermite(i, a).0;
            let fm = self.hermite(i, 0.5 * (a + b)).0;
            let fb = self.hermite(i, b).0;
            (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        };
        let (tl, vl, dl) = self.last();
        let mut acc = 0.0;
        for i in 0..self.t.len() - 1 {
            let (a, b) = (self.t[i], self.t[i + 1]);
            if x <= a {
                break;
            }
            acc += simpson(i, a, b.min(x));
        }
        if x > tl {
            let d = x - tl;
            acc += vl * d + 0.5 * dl * d * d;
        }
        acc
    }
}

// ---------------------------------------------------------------------------
// piecewise-linear tables for f and g
// ---------------------------------------------------------------------------

/// Piecewise-linear function through sorted knots, linear extrapolation outside.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidParameter(
                "table needs at least two knots with matching lengths".into(),
            ));
        }
        if !x.windows(2).all(|w| w[1] > w[0]) || x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "table knots must be finite and strictly increasing".into(),
            ));
        }
        Ok(PiecewiseLinear { x, y })
    }

    fn segment(&self, u: f64) -> usize {
        match self.x.partition_point(|&k| k <= u) {
            0 => 0,
            i => (i - 1).min(self.x.len() - 2),
        }
    }

    fn slope(&self, i: usize) -> f64 {
        (self.y[i + 1] - self.y[i]) / (self.x[i + 1] - self.x[i])
    }

    pub fn eval(&self, u: f64) -> f64 {
        let i = self.segment(u);
        self.y[i] + self.slope(i) * (u - self.x[i])
    }

    pub fn derivative(&self, u: f64) -> f64 {
        self.slope(self.segment(u))
    }

    fn max_abs_slope(&self) -> f64 {
        (0..self.x.len() - 1).map(|i| self.slope(i).abs()).fold(0.0, f64::max)
    }

    /// Splits into the parts built from the positive and negative slopes, both anchored at
    /// `value_at_zero` at `u = 0`.
    fn split(&self, value_at_zero: f64) -> (PiecewiseLinear, PiecewiseLinear) {
        let mut x = self.x.clone();
        if let Err(pos) = x.binary_search_by(|k| k.partial_cmp(&0.0).unwrap()) {
            x.insert(pos, 0.0);
        }
        let zero = x.iter().position(|&k| k == 0.0).unwrap();
        let build = |keep: fn(f64) -> f64| {
            let mut y = vec![0.0; x.len()];
            y[zero] = value_at_zero;
            for i in zero + 1..x.len() {
                let s = self.derivative(0.5 * (x[i - 1] + x[i]));
                y[i] = y[i - 1] + keep(s) * (x[i] - x[i - 1]);
            }
            for i in (0..zero).rev() {
                let s = self.derivative(0.5 * (x[i] + x[i + 1]));
                y[i] = y[i + 1] - keep(s) * (x[i + 1] - x[i]);
            }
            // end slopes must follow the split extrapolation too
            let k = x.len();
            let mut xs = x.clone();
            let lo_s = keep(self.derivative(x[0] - 1.0));
            let hi_s = keep(self.derivative(x[k - 1] + 1.0));
            xs.insert(0, x[0] - 1.0);
            y.insert(0, y[0] - lo_s);
            xs.push(x[k - 1] + 1.0);
            y.push(y[k] + hi_s);
            PiecewiseLinear { x: xs, y }
        };
        (build(|s| s.max(0.0)), build(|s| s.min(0.0)))
    }
}

// ---------------------------------------------------------------------------
// flux f
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum FluxSpec {
    Zero,
    /// `f(u) = c u`.
    Linear { coefficient: f64 },
    /// `f(u) = c |u|^(gamma + 1)`, so that `|f'(u)| = c (gamma+1) |u|^gamma`.
    Power { gamma: f64, coefficient: f64 },
    /// Piecewise-linear table; must pass through the origin.
    Table(PiecewiseLinear),
    /// `f` clamped to `f(+-R)` outside `[-R, R]`.
    Truncated { inner: Box<FluxSpec>, radius: f64 },
    /// `inner` on one closed half-line (`u >= 0` if `positive`, else `u < 0`), zero elsewhere.
    HalfLine { inner: Box<FluxSpec>, positive: bool },
}

impl FluxSpec {
    pub fn power(gamma: f64, coefficient: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() || !coefficient.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "flux power needs gamma >= 0 and a finite coefficient, got gamma={gamma}"
            )));
        }
        Ok(FluxSpec::Power { gamma, coefficient })
    }

    pub fn table(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let t = PiecewiseLinear::new(x, y)?;
        if t.eval(0.0).abs() > 1e-14 {
            return Err(Error::InvalidParameter("flux table must satisfy f(0) = 0".into()));
        }
        Ok(FluxSpec::Table(t))
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FluxSpec::Zero => true,
            FluxSpec::Linear { coefficient } | FluxSpec::Power { coefficient, .. } => {
                *coefficient == 0.0
            }
            FluxSpec::Truncated { inner, .. } | FluxSpec::HalfLine { inner, .. } => inner.is_zero(),
            FluxSpec::Table(_) => false,
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            FluxSpec::Zero => 0.0,
            FluxSpec::Linear { coefficient } => coefficient * u,
            FluxSpec::Power { gamma, coefficient } => {
                if *gamma == 1.0 {
                    coefficient * u * u
                } else {
                    coefficient * u.abs().powf(gamma + 1.0)
                }
            }
            FluxSpec::Table(t) => t.eval(u),
            FluxSpec::Truncated { inner, radius } => inner.eval(u.clamp(-radius, *radius)),
            FluxSpec::HalfLine { inner, positive } => {
                if (u >= 0.0) == *positive {
                    inner.eval(u)
                } else {
                    0.0
                }
            }
        }
    }

    /// A.e. derivative of [`FluxSpec::eval`].
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            FluxSpec::Zero => 0.0,
            FluxSpec::Linear { coefficient } => *coefficient,
            FluxSpec::Power { gamma, coefficient } => {
                coefficient * (gamma + 1.0) * u.abs().powf(*gamma) * u.signum()
            }
            FluxSpec::Table(t) => t.derivative(u),
            FluxSpec::Truncated { inner, radius } => {
                if u.abs() < *radius {
                    inner.derivative(u)
                } else {
                    0.0
                }
            }
            FluxSpec::HalfLine { inner, positive } => {
                if (u >= 0.0) == *positive {
                    inner.derivative(u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Exponent `gamma` of the growth bound `|f'(s)| <= c (1 + |s|^gamma)`; `None` for `f = 0`.
    pub fn growth_exponent(&self) -> Option<f64> {
        if self.is_zero() {
            return None;
        }
        match self {
            FluxSpec::Zero => None,
            FluxSpec::Linear { .. } | FluxSpec::Table(_) | FluxSpec::Truncated { .. } => Some(0.0),
            FluxSpec::Power { gamma, .. } => Some(*gamma),
            FluxSpec::HalfLine { inner, .. } => inner.growth_exponent(),
        }
    }

    /// `sup_{|s| <= r} |f'(s)|`.
    pub fn lipschitz_on(&self, r: f64) -> f64 {
        match self {
            FluxSpec::Zero => 0.0,
            FluxSpec::Linear { coefficient } => coefficient.abs(),
            FluxSpec::Power { gamma, coefficient } => {
                coefficient.abs() * (gamma + 1.0) * r.powf(*gamma)
            }
            FluxSpec::Table(t) => t.max_abs_slope(),
            FluxSpec::Truncated { inner, radius } => inner.lipschitz_on(r.min(*radius)),
            FluxSpec::HalfLine { inner, .. } => inner.lipschitz_on(r),
        }
    }

    pub fn truncate(&self, radius: f64) -> Result<FluxSpec> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        Ok(FluxSpec::Truncated {
            inner: Box::new(self.clone()),
            radius,
        })
    }

    /// Non-decreasing and non-increasing parts: `f_up' = (f')_+`, `f_down' = (f')_-`,
    /// both equal to `f(0) = 0` at the origin.
    pub fn monotone_split(&self) -> (FluxSpec, FluxSpec) {
        match self {
            FluxSpec::Zero => (FluxSpec::Zero, FluxSpec::Zero),
            FluxSpec::Linear { coefficient } => {
                if *coefficient >= 0.0 {
                    (self.clone(), FluxSpec::Zero)
                } else {
                    (FluxSpec::Zero, self.clone())
                }
            }
            FluxSpec::Power { coefficient, .. } => {
                // f' has the sign of c * u
                let pos = FluxSpec::HalfLine {
                    inner: Box::new(self.clone()),
                    positive: true,
                };
                let neg = FluxSpec::HalfLine {
                    inner: Box::new(self.clone()),
                    positive: false,
                };
                if *coefficient >= 0.0 {
                    (pos, neg)
                } else {
                    (neg, pos)
                }
            }
            FluxSpec::Table(t) => {
                let (up, down) = t.split(0.0);
                (FluxSpec::Table(up), FluxSpec::Table(down))
            }
            FluxSpec::Truncated { inner, radius } => {
                let (up, down) = inner.monotone_split();
                (
                    FluxSpec::Truncated {
                        inner: Box::new(up),
                        radius: *radius,
                    },
                    FluxSpec::Truncated {
                        inner: Box::new(down),
                        radius: *radius,
                    },
                )
            }
            FluxSpec::HalfLine { inner, positive } => {
                let (up, down) = inner.monotone_split();
                (
                    FluxSpec::HalfLine {
                        inner: Box::new(up),
                        positive: *positive,
                    },
                    FluxSpec::HalfLine {
                        inner: Box::new(down),
                        positive: *positive,
                    },
                )
            }
        }
    }
}

// ---------------------------------------------------------------------------
// source g
// ---------------------------------------------------------------------------

/// Spatial profile of a source that does not depend on `u`.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceProfile {
    Uniform(f64),
    Bump { amplitude: f64, center: f64, width: f64 },
    /// Values at nodes `a + (i+1) (b-a)/(n+1)`, linearly interpolated, zero at `a` and `b`.
    Nodal { a: f64, b: f64, values: Vec<f64> },
}

impl SourceProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SourceProfile::Uniform(v) => *v,
            SourceProfile::Bump {
                amplitude,
                center,
                width,
            } => smooth_bump(x, *amplitude, *center, *width),
            SourceProfile::Nodal { a, b, values } => {
                let n = values.len();
                let h = (b - a) / (n as f64 + 1.0);
                let s = (x - a) / h;
                if !(s > 0.0 && s < n as f64 + 1.0) {
                    return 0.0;
                }
                let k = s.floor() as usize;
                let frac = s - k as f64;
                let at = |j: usize| {
                    if j == 0 || j > n {
                        0.0
                    } else {
                        values[j - 1]
                    }
                };
                (1.0 - frac) * at(k) + frac * at(k + 1)
            }
        }
    }

    fn sup_abs(&self) -> f64 {
        match self {
            SourceProfile::Uniform(v) => v.abs(),
            SourceProfile::Bump { amplitude, .. } => amplitude.abs(),
            SourceProfile::Nodal { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    fn min_value(&self) -> f64 {
        match self {
            SourceProfile::Uniform(v) => *v,
            SourceProfile::Bump { amplitude, .. } => amplitude.min(0.0),
            SourceProfile::Nodal { values, .. } => values.iter().fold(0.0, |m, &v| m.min(v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Zero,
    /// `g(t, x, u) = h(x)`.
    ConstantInU(SourceProfile),
    /// `g(u) = |u|^(r-1) u`, `r > 0`.
    Power { r: f64 },
    /// Lipschitz `g(u)` given by a piecewise-linear table.
    LipschitzTable(PiecewiseLinear),
    /// `g(t) = offset + slope t`, independent of `x` and `u`.
    TimeLinear { offset: f64, slope: f64 },
    /// `g(t, x, sgn(u) min(|u|, R))`.
    Truncated { inner: Box<SourceSpec>, radius: f64 },
}

impl SourceSpec {
    pub fn power(r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("source.r must be > 0, got {r}")));
        }
        Ok(SourceSpec::Power { r })
    }

    pub fn eval(&self, t: f64, x: f64, u: f64) -> f64 {
        match self {
            SourceSpec::Zero => 0.0,
            SourceSpec::ConstantInU(h) => h.eval(x),
            SourceSpec::Power { r } => {
                if *r == 1.0 {
                    u
                } else if *r == 2.0 {
                    u.abs() * u
                } else {
                    u.signum() * u.abs().powf(*r)
                }
            }
            SourceSpec::LipschitzTable(tab) => tab.eval(u),
            SourceSpec::TimeLinear { offset, slope } => offset + slope * t,
            SourceSpec::Truncated { inner, radius } => inner.eval(t, x, u.clamp(-radius, *radius)),
        }
    }

    pub fn truncate(&self, radius: f64) -> Result<SourceSpec> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        Ok(SourceSpec::Truncated {
            inner: Box::new(self.clone()),
            radius,
        })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            SourceSpec::Zero => true,
            SourceSpec::ConstantInU(h) => h.sup_abs() == 0.0,
            SourceSpec::TimeLinear { offset, slope } => *offset == 0.0 && *slope == 0.0,
            SourceSpec::Truncated { inner, .. } => inner.is_zero(),
            _ => false,
        }
    }

    pub fn is_autonomous(&self) -> bool {
        match self {
            SourceSpec::TimeLinear { slope, .. } => *slope == 0.0,
            SourceSpec::Truncated { inner, .. } => inner.is_autonomous(),
            _ => true,
        }
    }

    /// Whether `g` depends on `u` at all.
    pub fn depends_on_u(&self) -> bool {
        match self {
            SourceSpec::Zero | SourceSpec::ConstantInU(_) | SourceSpec::TimeLinear { .. } => false,
            SourceSpec::Truncated { inner, .. } => inner.depends_on_u(),
            _ => true,
        }
    }

    /// Exponent `r` if this is the (untruncated) power family.
    pub fn power_exponent(&self) -> Option<f64> {
        match self {
            SourceSpec::Power { r } => Some(*r),
            _ => None,
        }
    }

    /// Nonnegative source independent of `u`.
    pub fn is_nonnegative_profile(&self) -> bool {
        match self {
            SourceSpec::Zero => true,
            SourceSpec::ConstantInU(h) => h.min_value() >= 0.0,
            SourceSpec::TimeLinear { offset, slope } => *offset >= 0.0 && *slope >= 0.0,
            SourceSpec::Truncated { inner, .. } => inner.is_nonnegative_profile(),
            _ => false,
        }
    }

    /// Constants `(c_g, q_g)` of the growth bound `|g(t,x,s)| <= c_g (1 + |s|^q_g)` for
    /// `t in [0, horizon]`.
    pub fn growth_constants(&self, horizon: f64) -> (f64, f64) {
        match self {
            SourceSpec::Zero => (0.0, 0.0),
            SourceSpec::ConstantInU(h) => (h.sup_abs(), 0.0),
            SourceSpec::Power { r } => (1.0, *r),
            SourceSpec::LipschitzTable(tab) => (tab.eval(0.0).abs().max(tab.max_abs_slope()), 1.0),
            SourceSpec::TimeLinear { offset, slope } => {
                (offset.abs().max((offset + slope * horizon).abs()), 0.0)
            }
            SourceSpec::Truncated { inner, radius } => {
                let (c, q) = inner.growth_constants(horizon);
                (c * (1.0 + radius.powf(q)), 0.0)
            }
        }
    }
}

/// Measured `sup_{[0,R]} g / beta(R)` for an autonomous `g(u)`, sampled on 1000 points.
pub fn g2_ratio(source: &SourceSpec, beta: &BetaSpec, radius: f64) -> f64 {
    let samples = 1000;
    let sup = (0..=samples)
        .map(|i| source.eval(0.0, 0.0, radius * i as f64 / samples as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    sup / beta.eval(radius)
}

// ---------------------------------------------------------------------------
// regime checks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Growth hypotheses of local existence.
    Existence,
    /// Lipschitz-type condition on `g` relative to `beta` for uniqueness.
    Uniqueness,
    Stabilization,
    Extinction,
    BlowUp,
}

/// Lists every violated hypothesis of `regime` for `params`; empty means all hold.
pub fn validate_regime(params: &ModelParams, regime: Regime) -> Vec<String> {
    let mut bad = Vec::new();
    let (p, q, mu) = (params.p, params.q, params.mu);
    let m = params.beta.m();
    match regime {
        Regime::Existence => {
            if let Some(m) = m {
                if p < 1.0 + 1.0 / m {
                    bad.push(format!(
                        "|beta(t)| <= c(1+|t|^(p-1)) fails: p = {p} < 1 + 1/m = {}",
                        1.0 + 1.0 / m
                    ));
                }
            }
        }
        Regime::Uniqueness => match (m, params.source.power_exponent()) {
            (Some(m), Some(r)) if r < 1.0 / m => {
                bad.push(format!("g locally Lipschitz w.r.t. beta fails: r = {r} < 1/m = {}", 1.0 / m))
            }
            _ => {}
        },
        Regime::Stabilization => {
            if !(mu > 0.0) {
                bad.push(format!("mu > 0 fails: mu = {mu}"));
            }
            if params.source.depends_on_u() || !params.source.is_nonnegative_profile() {
                bad.push("source must be a nonnegative function independent of u".into());
            }
        }
        Regime::Extinction => {
            if !(mu > 0.0) {
                bad.push(format!("mu > 0 fails: mu = {mu}"));
            }
            match (m, params.source.power_exponent()) {
                (Some(m), Some(r)) => {
                    if !(q < r + 1.0) {
                        bad.push(format!("q < r+1 fails: q = {q}, r+1 = {}", r + 1.0));
                    }
                    if !(r + 1.0 < 1.0 / m + 1.0) {
                        bad.push(format!(
                            "r+1 < 1/m+1 fails: r+1 = {}, 1/m+1 = {}",
                            r + 1.0,
                            1.0 / m + 1.0
                        ));
                    }
                }
                (None, _) => bad.push("beta must be the power family".into()),
                (_, None) => bad.push("source must be the power family |u|^(r-1)u".into()),
            }
        }
        Regime::BlowUp => {
            if m.is_none() {
                bad.push("beta must be the power family".into());
            }
            match params.source.power_exponent() {
                Some(r) => {
                    if mu == 0.0 && !(r > p - 1.0) {
                        bad.push(format!("r > p-1 fails (mu = 0): r = {r}, p-1 = {}", p - 1.0));
                    }
                    if mu > 0.0 && !(r > (p - 1.0).min(q - 1.0)) {
                        bad.push(format!(
                            "r > min(p-1, q-1) fails (mu > 0): r = {r}, min = {}",
                            (p - 1.0).min(q - 1.0)
                        ));
                    }
                }
                None => bad.push("source must be the power family |u|^(r-1)u".into()),
            }
            if let Some(gamma) = params.flux.growth_exponent() {
                if !(2.0 * (gamma + 1.0) < p) {
                    bad.push(format!(
                        "2(gamma+1) < p fails: 2(gamma+1) = {}, p = {p}",
                        2.0 * (gamma + 1.0)
                    ));
                }
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn beta_examples() {
        let b2 = BetaSpec::power(2.0).unwrap();
        assert!(close(b2.eval(4.0), 2.0, 1e-15));
        assert!(close(b2.eval(-9.0), -3.0, 1e-15));
        let b1 = BetaSpec::power(1.0).unwrap();
        for t in [-3.5, 0.0, 2.25] {
            assert_eq!(b1.eval(t), t);
            assert_eq!(b1.inv(t), t);
        }
        assert!(close(b2.inv(2.0), 4.0, 1e-15));
        assert_eq!(b2.inv(0.0), 0.0);
        let b3 = BetaSpec::power(3.0).unwrap();
        assert!(close(b3.inv(-2.0), -8.0, 1e-15));
        assert!(close(b2.primitive(4.0), 16.0 / 3.0, 1e-14));
        assert_eq!(b2.primitive(0.0), 0.0);
        assert_eq!(b2.primitive(-2.7), b2.primitive(2.7));
        assert!(BetaSpec::power(0.5).is_err());
        assert_eq!(b2.holder_alpha(), 0.5);
        assert_eq!(b1.holder_alpha(), 1.0);
    }

    #[test]
    fn beta_primitive_derivative_is_beta() {
        for b in [BetaSpec::power(1.25).unwrap(), BetaSpec::power(3.0).unwrap(), table_beta()] {
            for &t in &[-2.0, -0.3, 0.4, 1.7, 5.0] {
                let e = 1e-6;
                let fd = (b.primitive(t + e) - b.primitive(t - e)) / (2.0 * e);
                assert!(close(fd, b.eval(t), 1e-7), "{b:?} t={t}: {fd} vs {}", b.eval(t));
                let fd = (b.eval(t + e) - b.eval(t - e)) / (2.0 * e);
                assert!(close(fd, b.derivative(t), 1e-6));
            }
        }
    }

    fn table_beta() -> BetaSpec {
        let t: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
        let v: Vec<f64> = t.iter().map(|&x: &f64| x.sqrt() + 0.1 * x).collect();
        BetaSpec::table(t, v).unwrap()
    }

    #[test]
    fn beta_table_round_trip_and_oddness() {
        let b = table_beta();
        for &t in &[-7.0, -1.3, -0.01, 0.0, 0.2, 2.6, 4.99, 12.0] {
            let v = b.eval(t);
            assert!((b.inv(v) - t).abs() <= 1e-11 * (1.0 + t.abs()), "t={t}");
            assert_eq!(b.eval(-t), -v);
        }
        assert!(BetaSpec::table(vec![0.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(BetaSpec::table(vec![0.5, 1.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn g_examples() {
        let g = SourceSpec::power(3.0).unwrap();
        assert_eq!(g.eval(0.0, 0.0, 2.0), 8.0);
        assert_eq!(SourceSpec::Zero.eval(1.0, 0.3, 5.0), 0.0);
        let h = SourceSpec::ConstantInU(SourceProfile::Bump {
            amplitude: 2.0,
            center: 0.5,
            width: 0.25,
        });
        let x = 0.6;
        assert_eq!(h.eval(0.0, x, -3.0), h.eval(0.0, x, 10.0));
        assert_eq!(h.eval(0.0, x, 1.0), smooth_bump(x, 2.0, 0.5, 0.25));
    }

    #[test]
    fn g_truncate_examples() {
        let g = SourceSpec::power(3.0).unwrap().truncate(2.0).unwrap();
        assert_eq!(g.eval(0.0, 0.0, 5.0), 8.0);
        assert_eq!(g.eval(0.0, 0.0, -5.0), -8.0);
        assert_eq!(g.eval(0.0, 0.0, 1.0), 1.0);
        assert!(SourceSpec::Zero.truncate(0.0).is_err());
        assert!(SourceSpec::Zero.truncate(-1.0).is_err());
    }

    #[test]
    fn f_examples() {
        assert_eq!(FluxSpec::Zero.eval(3.0), 0.0);
        let f = FluxSpec::power(1.0, 1.0).unwrap();
        assert_eq!(f.eval(3.0), 9.0);
        assert_eq!(f.derivative(3.0), 6.0);
        assert_eq!(f.eval(0.0), 0.0);
        let fr = f.truncate(2.0).unwrap();
        assert_eq!(fr.eval(3.0), 4.0);
        assert_eq!(fr.eval(-3.0), 4.0);
        for &u in &[-2.0, -1.1, 0.0, 0.7, 2.0] {
            assert_eq!(fr.eval(u), f.eval(u));
        }
        assert!(f.truncate(0.0).is_err());
    }

    #[test]
    fn f_growth_bound_by_sampling() {
        // |f'(s)| <= c (1 + |s|^gamma) with c = coefficient (gamma+1)
        for &(gamma, c) in &[(0.0, 2.0), (0.5, 1.0), (1.0, -3.0)] {
            let f = FluxSpec::power(gamma, c).unwrap();
            let bound_c = c.abs() * (gamma + 1.0);
            for i in -400..=400 {
                let s = i as f64 * 0.05;
                assert!(f.derivative(s).abs() <= bound_c * (1.0 + s.abs().powf(gamma)) + 1e-12);
            }
        }
    }

    #[test]
    fn monotone_split_examples() {
        let f = FluxSpec::power(1.0, 1.0).unwrap();
        let (up, down) = f.monotone_split();
        for &u in &[-3.0, -0.5, 0.0, 0.5, 3.0] {
            let expect_up = if u >= 0.0 { u * u } else { 0.0 };
            assert_eq!(up.eval(u), expect_up);
            assert_eq!(up.eval(u) + down.eval(u), f.eval(u));
        }
        let lin = FluxSpec::Linear { coefficient: 2.0 };
        let (up, down) = lin.monotone_split();
        assert_eq!(up, lin);
        assert_eq!(down, FluxSpec::Zero);
    }

    /// Trapezoid integration of `(f')_+` and `(f')_-` from 0 to `u`.
    fn split_by_quadrature(f: &FluxSpec, u: f64) -> (f64, f64) {
        let n = 20000;
        let ds = u / n as f64;
        let (mut up, mut down) = (0.0, 0.0);
        for k in 0..n {
            let s0 = k as f64 * ds;
            let s1 = s0 + ds;
            // midpoint of each cell avoids evaluating the kink points
            let d = f.derivative(0.5 * (s0 + s1));
            up += d.max(0.0) * ds;
            down += d.min(0.0) * ds;
        }
        (up, down)
    }

    #[test]
    fn monotone_split_matches_quadrature() {
        let table = FluxSpec::table(
            vec![-2.0, -1.0, 0.0, 0.5, 1.5, 3.0],
            vec![1.0, -0.5, 0.0, 0.8, 0.2, 1.4],
        )
        .unwrap();
        let specs = [
            FluxSpec::power(1.0, 1.0).unwrap(),
            FluxSpec::power(0.5, -2.0).unwrap(),
            FluxSpec::Linear { coefficient: -1.5 },
            table.clone(),
            table.truncate(1.0).unwrap(),
            FluxSpec::power(1.0, 1.0).unwrap().truncate(1.5).unwrap(),
        ];
        for f in &specs {
            let (up, down) = f.monotone_split();
            for i in -40..=40 {
                let u = i as f64 * 0.1;
                let (qu, qd) = split_by_quadrature(f, u);
                // midpoint cells straddling a kink carry an O(ds) error
                assert!((up.eval(u) - qu).abs() < 1e-3, "{f:?} u={u}: {} vs {qu}", up.eval(u));
                assert!((down.eval(u) - qd).abs() < 1e-3);
                assert!((up.eval(u) + down.eval(u) - f.eval(u)).abs() < 1e-10);
            }
            for i in -40..40 {
                let (a, b) = (i as f64 * 0.1, (i + 1) as f64 * 0.1);
                assert!(up.eval(b) >= up.eval(a) - 1e-12);
                assert!(down.eval(b) <= down.eval(a) + 1e-12);
            }
        }
    }

    fn params_for(p: f64, q: f64, mu: f64, m: f64, source: SourceSpec, flux: FluxSpec) -> ModelParams {
        ModelParams::new(
            p,
            q,
            0.5,
            mu,
            BetaSpec::power(m).unwrap(),
            flux,
            source,
            Grid::new(0.0, 1.0, 8).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn validate_regime_examples() {
        let ext = params_for(2.5, 1.5, 1.0, 1.25, SourceSpec::power(0.6).unwrap(), FluxSpec::Zero);
        assert!(validate_regime(&ext, Regime::Extinction).is_empty());

        let blow = params_for(2.5, 2.0, 0.0, 2.0, SourceSpec::power(2.0).unwrap(), FluxSpec::Zero);
        assert!(validate_regime(&blow, Regime::BlowUp).is_empty());

        let bad = params_for(2.5, 1.5, 1.0, 2.0, SourceSpec::power(1.0).unwrap(), FluxSpec::Zero);
        let v = validate_regime(&bad, Regime::Extinction);
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("r+1 < 1/m+1 fails"), "{v:?}");

        let flux = FluxSpec::power(1.0, 1.0).unwrap();
        let blow_f = params_for(3.0, 2.0, 0.0, 2.0, SourceSpec::power(3.0).unwrap(), flux);
        let v = validate_regime(&blow_f, Regime::BlowUp);
        assert!(v.iter().any(|s| s.contains("2(gamma+1) < p")), "{v:?}");

        let stab = params_for(
            3.0,
            2.0,
            0.0,
            1.0,
            SourceSpec::ConstantInU(SourceProfile::Uniform(-1.0)),
            FluxSpec::Zero,
        );
        assert_eq!(validate_regime(&stab, Regime::Stabilization).len(), 2);
    }

    #[test]
    fn g2_ratio_power_family() {
        // g(u) = u^r against beta(R) = R^(1/m): ratio R^(r - 1/m)
        let beta = BetaSpec::power(2.0).unwrap();
        let g = SourceSpec::power(0.5).unwrap();
        assert!(close(g2_ratio(&g, &beta, 100.0), 1.0, 1e-12));
        let g = SourceSpec::power(0.25).unwrap();
        assert!(g2_ratio(&g, &beta, 1e4) < 0.2);
    }

    proptest! {
        #[test]
        fn beta_inverse_round_trip(t in -1e6f64..1e6, m in 1.0f64..4.0) {
            let b = BetaSpec::power(m).unwrap();
            let back = b.inv(b.eval(t));
            prop_assert!((back - t).abs() <= 1e-12 * t.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn beta_primitive_is_convex(a in -50.0f64..50.0, c in -50.0f64..50.0, m in 1.0f64..4.0) {
            let b = BetaSpec::power(m).unwrap();
            let mid = b.primitive(0.5 * (a + c));
            prop_assert!(mid <= 0.5 * (b.primitive(a) + b.primitive(c)) * (1.0 + 1e-14) + 1e-14);
        }

        #[test]
        fn beta_lower_slope_bound(k in 0.1f64..20.0, x in 0.0f64..1.0, y in 0.0f64..1.0, m in 1.0f64..4.0) {
            let b = BetaSpec::power(m).unwrap();
            let (t1, t2) = (k * (2.0 * x - 1.0), k * (2.0 * y - 1.0));
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(b.eval(hi) - b.eval(lo) >= b.lower_slope(k) * (hi - lo) - 1e-12);
        }

        #[test]
        fn g_truncate_bounds(r in 0.2f64..4.0, radius in 0.1f64..5.0, u in -50.0f64..50.0) {
            let g = SourceSpec::power(r).unwrap();
            let gr = g.truncate(radius).unwrap();
            prop_assert!(gr.eval(0.0, 0.0, u).abs() <= radius.powf(r) * (1.0 + 1e-14));
            if u.abs() <= radius {
                prop_assert_eq!(gr.eval(0.0, 0.0, u), g.eval(0.0, 0.0, u));
            }
            // pointwise convergence on a fixed bounded set
            let big = g.truncate(100.0).unwrap();
            let v = u / 50.0;
            prop_assert_eq!(big.eval(0.0, 0.0, v), g.eval(0.0, 0.0, v));
        }

        #[test]
        fn f_truncate_lipschitz(gamma in 0.0f64..2.0, c in -3.0f64..3.0, radius in 0.1f64..3.0, a in -6.0f64..6.0, d in 1e-3f64..2.0) {
            let f = FluxSpec::power(gamma, c).unwrap();
            let fr = f.truncate(radius).unwrap();
            let lip = f.lipschitz_on(radius);
            let b = a + d;
            prop_assert!((fr.eval(b) - fr.eval(a)).abs() <= lip * d * (1.0 + 1e-12) + 1e-12);
        }
    }
}
