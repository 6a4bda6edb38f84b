//! Uniform 1-D mesh on a bounded interval and the discrete norms used throughout.
//!
//! Only interior nodes carry unknowns. The values at the two boundary nodes and
//! everywhere outside `(a, b)` are identically zero, which covers both the local
//! Dirichlet condition and the exterior condition of the nonlocal operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    a: f64,
    b: f64,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "endpoints must be finite, got ({a}, {b})"
            )));
        }
        if b <= a {
            return Err(Error::InvalidDomain(format!("need b > a, got ({a}, {b})")));
        }
        if n == 0 {
            return Err(Error::InvalidDomain("need at least one interior node".into()));
        }
        Ok(Grid {
            a,
            b,
            n,
            h: (b - a) / (n as f64 + 1.0),
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Mesh width `(b - a) / (n + 1)`.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Coordinate of interior node `i` (zero-based, so node `i` sits at `a + (i + 1) h`).
    pub fn node(&self, i: usize) -> f64 {
        self.a + (i as f64 + 1.0) * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "grid ({}, {}, n={}) does not match grid ({}, {}, n={})",
                self.a, self.b, self.n, other.a, other.b, other.n
            )))
        }
    }

    /// Quadrature weight `h / |x_i - x_j|^(1+sq)` of the node pair `(i, j)`, `i != j`.
    pub(crate) fn pair_weight(&self, i: usize, j: usize, sq: f64) -> f64 {
        let dist = (i as f64 - j as f64).abs() * self.h;
        self.h / dist.powf(1.0 + sq)
    }

    /// Closed-form exterior integral `int_{R \ (a,b)} |x_i - y|^-(1+sq) dy`.
    pub(crate) fn exterior_tail(&self, i: usize, sq: f64) -> f64 {
        let x = self.node(i);
        ((x - self.a).powf(-sq) + (self.b - x).powf(-sq)) / sq
    }
}

/// Nodal values at the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "field value at node {i} is not finite"
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Field {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Self {
        Field {
            grid,
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    /// Builds a field without the finiteness scan. Length must match.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field::from_raw(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Value with zero extension: index `-1` and `n` are the boundary nodes.
    pub(crate) fn ext(&self, i: isize) -> f64 {
        if i < 0 || i as usize >= self.values.len() {
            0.0
        } else {
            self.values[i as usize]
        }
    }
}

fn check_lp_exponent(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 1.0 {
        return Err(Error::InvalidExponent(format!(
            "L^gamma norm needs gamma >= 1, got {gamma}"
        )));
    }
    Ok(())
}

/// `(h sum |u_i|^gamma)^(1/gamma)`; `gamma = f64::INFINITY` gives the max norm.
pub fn lp_norm(u: &Field, gamma: f64) -> Result<f64> {
    check_lp_exponent(gamma)?;
    Ok(lp_norm_unchecked(u.values(), u.grid().h(), gamma))
}

pub(crate) fn lp_norm_unchecked(values: &[f64], h: f64, gamma: f64) -> f64 {
    if gamma.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    if gamma == 1.0 {
        return h * values.iter().map(|v| v.abs()).sum::<f64>();
    }
    (h * values.iter().map(|v| v.abs().powf(gamma)).sum::<f64>()).powf(1.0 / gamma)
}

/// `h sum |u_i|^gamma`, i.e. the norm raised to the power `gamma`.
pub fn lp_norm_pow(u: &Field, gamma: f64) -> Result<f64> {
    check_lp_exponent(gamma)?;
    if gamma.is_infinite() {
        return Err(Error::InvalidExponent("power of the max norm is undefined".into()));
    }
    let h = u.grid().h();
    Ok(h * u.values().iter().map(|v| v.abs().powf(gamma)).sum::<f64>())
}

/// Forward differences `(u_{i+1} - u_i) / h` on all `n + 1` faces, zero boundary values.
pub(crate) fn face_slopes(u: &Field) -> Vec<f64> {
    let h = u.grid().h();
    let n = u.len() as isize;
    (-1..n).map(|i| (u.ext(i + 1) - u.ext(i)) / h).collect()
}

/// `h sum_faces |D u|^p`.
pub(crate) fn w1p_pow(u: &Field, p: f64) -> f64 {
    let h = u.grid().h();
    h * face_slopes(u).iter().map(|d| d.abs().powf(p)).sum::<f64>()
}

/// Discrete `||grad u||_p` with zero boundary values.
pub fn w1p_seminorm(u: &Field, p: f64) -> Result<f64> {
    if p.is_nan() || p <= 1.0 {
        return Err(Error::InvalidExponent(format!(
            "W^(1,p) seminorm needs p > 1, got {p}"
        )));
    }
    Ok(w1p_pow(u, p).powf(1.0 / p))
}

pub(crate) fn check_fractional_exponents(s: f64, q: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidExponent(format!("need s in (0,1), got {s}")));
    }
    if q.is_nan() || q <= 1.0 {
        return Err(Error::InvalidExponent(format!("need q > 1, got {q}")));
    }
    Ok(())
}

/// Discrete Gagliardo energy `||u||^q` over `R x R` for a field vanishing outside `(a, b)`.
///
/// Interior pairs use the midpoint weight `h^2 / |x_i - x_j|^(1+sq)`; the two
/// exterior strips contribute `2 h tau_i |u_i|^q` with the tail in closed form.
pub(crate) fn wsq_pow(u: &Field, s: f64, q: f64) -> f64 {
    let grid = u.grid();
    let h = grid.h();
    let sq = s * q;
    let v = u.values();
    let mut interior = 0.0;
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            interior += grid.pair_weight(i, j, sq) * (v[i] - v[j]).abs().powf(q);
        }
    }
    let tail: f64 = (0..v.len())
        .map(|i| grid.exterior_tail(i, sq) * v[i].abs().powf(q))
        .sum();
    2.0 * h * (interior + tail)
}

/// Discrete `W^{s,q}_0` seminorm, see [`wsq_pow`].
pub fn wsq_seminorm(u: &Field, s: f64, q: f64) -> Result<f64> {
    check_fractional_exponents(s, q)?;
    Ok(wsq_pow(u, s, q).powf(1.0 / q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(grid: Grid, v: &[f64]) -> Field {
        Field::new(grid, v.to_vec()).unwrap()
    }

    #[test]
    fn build_grid_examples() {
        let g = Grid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.nodes(), vec![0.25, 0.5, 0.75]);

        let g = Grid::new(-1.0, 1.0, 1).unwrap();
        assert_eq!(g.h(), 1.0);
        assert_eq!(g.nodes(), vec![0.0]);

        assert!(matches!(Grid::new(0.0, 1.0, 0), Err(Error::InvalidDomain(_))));
        assert!(matches!(Grid::new(1.0, 1.0, 4), Err(Error::InvalidDomain(_))));
        assert!(matches!(
            Grid::new(f64::NAN, 1.0, 4),
            Err(Error::InvalidDomain(_))
        ));
    }

    #[test]
    fn field_rejects_bad_values() {
        let g = Grid::new(0.0, 1.0, 2).unwrap();
        assert!(Field::new(g, vec![1.0]).is_err());
        assert!(Field::new(g, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn lp_norm_examples() {
        let g3 = Grid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(lp_norm(&Field::zeros(g3), 2.0).unwrap(), 0.0);
        assert!((lp_norm(&field(g3, &[1.0, 1.0, 1.0]), 1.0).unwrap() - 0.75).abs() < 1e-15);
        let g2 = Grid::new(0.0, 1.0, 2).unwrap();
        assert_eq!(lp_norm(&field(g2, &[3.0, -4.0]), f64::INFINITY).unwrap(), 4.0);
        assert!(matches!(
            lp_norm(&Field::zeros(g2), 0.5),
            Err(Error::InvalidExponent(_))
        ));
    }

    #[test]
    fn w1p_examples() {
        let g3 = Grid::new(0.0, 1.0, 3).unwrap();
        assert_eq!(w1p_seminorm(&Field::zeros(g3), 3.0).unwrap(), 0.0);
        let u = field(g3, &[1.0, 1.0, 1.0]);
        // two boundary faces with slope 4: 0.25 * (64 + 64) = 32
        assert!((w1p_pow(&u, 3.0) - 32.0).abs() < 1e-12);
        assert!((w1p_seminorm(&u, 3.0).unwrap() - 32f64.cbrt()).abs() < 1e-12);
        assert!(w1p_seminorm(&u, 1.0).is_err());
    }

    #[test]
    fn wsq_single_node_is_tail_only() {
        let g = Grid::new(0.0, 1.0, 1).unwrap();
        let (s, q) = (0.5, 2.0);
        let u = field(g, &[1.0]);
        // x = 1/2: tail = 2 * (1/2)^(-1) / 1 = 4; energy = 2 h tail = 2 * 0.5 * 4
        let expect = (2.0 * 0.5 * 4.0f64).powf(1.0 / q);
        assert!((wsq_seminorm(&u, s, q).unwrap() - expect).abs() < 1e-14);
        assert_eq!(wsq_seminorm(&Field::zeros(g), s, q).unwrap(), 0.0);
        assert!(wsq_seminorm(&u, 1.0, 2.0).is_err());
        assert!(wsq_seminorm(&u, 0.5, 1.0).is_err());
    }

    #[test]
    fn wsq_matches_full_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &n in &[1usize, 5, 17, 32] {
            let g = Grid::new(-0.5, 1.5, n).unwrap();
            for &(s, q) in &[(0.3, 1.5), (0.5, 2.0), (0.8, 3.0)] {
                let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let u = field(g, &vals);
                // ordered double loop over all i != j plus both exterior strips
                let h = (1.5 - (-0.5)) / (n as f64 + 1.0);
                let mut acc = 0.0;
                for i in 0..n {
                    let xi = -0.5 + (i + 1) as f64 * h;
                    for j in 0..n {
                        if i != j {
                            let xj = -0.5 + (j + 1) as f64 * h;
                            acc += h * h * (vals[i] - vals[j]).abs().powf(q)
                                / (xi - xj).abs().powf(1.0 + s * q);
                        }
                    }
                    let left = (xi + 0.5).powf(-s * q) / (s * q);
                    let right = (1.5 - xi).powf(-s * q) / (s * q);
                    acc += 2.0 * h * vals[i].abs().powf(q) * (left + right);
                }
                let got = wsq_seminorm(&u, s, q).unwrap();
                assert!(
                    (got - acc.powf(1.0 / q)).abs() <= 1e-12 * (1.0 + got),
                    "n={n} s={s} q={q}: {got} vs {}",
                    acc.powf(1.0 / q)
                );
            }
        }
    }

    fn arb_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, n)
    }

    proptest! {
        #[test]
        fn norms_are_absolutely_homogeneous(vals in arb_values(9), c in -5.0f64..5.0) {
            let g = Grid::new(0.0, 2.0, 9).unwrap();
            let u = Field::new(g, vals).unwrap();
            let cu = u.scale(c);
            for gamma in [1.0, 2.5, f64::INFINITY] {
                let a = lp_norm(&cu, gamma).unwrap();
                let b = c.abs() * lp_norm(&u, gamma).unwrap();
                prop_assert!((a - b).abs() <= 1e-11 * (1.0 + b));
            }
            let a = w1p_seminorm(&cu, 3.0).unwrap();
            let b = c.abs() * w1p_seminorm(&u, 3.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-11 * (1.0 + b));
            let a = wsq_seminorm(&cu, 0.4, 1.7).unwrap();
            let b = c.abs() * wsq_seminorm(&u, 0.4, 1.7).unwrap();
            prop_assert!((a - b).abs() <= 1e-11 * (1.0 + b));
        }

        #[test]
        fn lp_norm_is_monotone(vals in arb_values(7), scales in prop::collection::vec(1.0f64..3.0, 7)) {
            let g = Grid::new(0.0, 1.0, 7).unwrap();
            let big: Vec<f64> = vals.iter().zip(&scales).map(|(v, s)| v * s).collect();
            let u = Field::new(g, vals).unwrap();
            let v = Field::new(g, big).unwrap();
            for gamma in [1.0, 2.0, 4.5, f64::INFINITY] {
                prop_assert!(lp_norm(&u, gamma).unwrap() <= lp_norm(&v, gamma).unwrap() * (1.0 + 1e-14));
            }
        }

        #[test]
        fn lp_interpolation_inequality(vals in arb_values(12), g1 in 1.0f64..3.0, dg in 0.0f64..1.0, g2 in 3.0f64..8.0) {
            let g = Grid::new(0.0, 1.0, 12).unwrap();
            let u = Field::new(g, vals).unwrap();
            for gamma2 in [g2, f64::INFINITY] {
                let gamma = g1 + dg * (3.0 - g1);
                // 1/gamma = theta/g1 + (1-theta)/gamma2
                let inv2 = if gamma2.is_infinite() { 0.0 } else { 1.0 / gamma2 };
                let theta = (1.0 / gamma - inv2) / (1.0 / g1 - inv2);
                let lhs = lp_norm(&u, gamma).unwrap();
                let rhs = lp_norm(&u, g1).unwrap().powf(theta) * lp_norm(&u, gamma2).unwrap().powf(1.0 - theta);
                prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
            }
        }

        #[test]
        fn norms_vanish_only_on_zero(vals in arb_values(5)) {
            let g = Grid::new(0.0, 1.0, 5).unwrap();
            let u = Field::new(g, vals.clone()).unwrap();
            let nonzero = vals.iter().any(|v| *v != 0.0);
            prop_assert_eq!(lp_norm(&u, 2.0).unwrap() > 0.0, nonzero);
            prop_assert_eq!(w1p_seminorm(&u, 2.5).unwrap() > 0.0, nonzero);
            prop_assert_eq!(wsq_seminorm(&u, 0.5, 2.0).unwrap() > 0.0, nonzero);
        }
    }
}
