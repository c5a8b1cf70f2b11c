//! Forward problem in (τ, y) = (time to maturity, log-moneyness):
//!
//! ```text
//! u_τ = a (u_yy − u_y) − r u_y,   u(0, y) = S0 (1 − e^y)^+,
//! u(τ, y_min) = S0,  u(τ, y_max) = 0.
//! ```
//!
//! Discretized with a θ-scheme in τ (θ = 1 for the first `rannacher_steps`
//! steps, then Crank–Nicolson) and central differences in y. Within a step
//! the diffusion coefficient is the mean of `a` at the two adjacent time
//! levels. The first step starts from the cell-averaged payoff, which keeps
//! the kink at y = 0 from degrading the second-order error constant; the
//! stored τ = 0 row is the exact nodal payoff. [`crate::adjoint`]
//! differentiates exactly this scheme.

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Surface};
use crate::linalg::Tridiagonal;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarketParams {
    pub spot: f64,
    pub rate: f64,
}

impl MarketParams {
    pub fn new(spot: f64, rate: f64) -> Result<Self> {
        if !(spot > 0.0 && spot.is_finite()) {
            return invalid(format!("spot must be positive, got {spot}"));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return invalid(format!("rate must be nonnegative, got {rate}"));
        }
        Ok(Self { spot, rate })
    }
}

impl Default for MarketParams {
    fn default() -> Self {
        Self { spot: 1.0, rate: 0.0 }
    }
}

/// Admissible range `[lower, upper]` of the diffusion coefficient `a = σ²/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionBounds {
    pub lower: f64,
    pub upper: f64,
}

impl DiffusionBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && upper > lower && upper.is_finite()) {
            return invalid(format!("need 0 < a_lower < a_upper, got [{lower}, {upper}]"));
        }
        Ok(Self { lower, upper })
    }

    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.lower, self.upper)
    }

    pub fn check(&self, a: &Surface) -> Result<()> {
        let slack = 1e-12 * self.upper;
        match a.values().iter().position(|&v| v < self.lower - slack || v > self.upper + slack) {
            Some(k) => invalid(format!(
                "diffusion value {} at flat index {k} outside [{}, {}]",
                a.values()[k],
                self.lower,
                self.upper
            )),
            None => Ok(()),
        }
    }
}

impl Default for DiffusionBounds {
    fn default() -> Self {
        Self { lower: 0.005, upper: 1.0 }
    }
}

/// Call payoff at expiry, `S0·max(1 − e^y, 0)` with `K = S0·e^y`, at every y node.
pub fn payoff(g: &Grid, p: &MarketParams) -> Vec<f64> {
    (0..g.cols()).map(|j| p.spot * (1.0 - g.y(j).exp()).max(0.0)).collect()
}

/// Payoff averaged over the dual cell `[y_j − dy/2, y_j + dy/2]` (clipped to
/// the domain). Used as the input of the first time step so the kink does not
/// sit on a node value.
pub(crate) fn cell_averaged_payoff(g: &Grid, p: &MarketParams) -> Vec<f64> {
    // antiderivative of (1 − e^y)^+
    let prim = |y: f64| if y < 0.0 { y - y.exp() } else { -1.0 };
    let h = g.d_y();
    (0..g.cols())
        .map(|j| {
            let lo = (g.y(j) - 0.5 * h).max(g.y_min);
            let hi = (g.y(j) + 0.5 * h).min(g.y_max);
            p.spot * (prim(hi) - prim(lo)) / (hi - lo)
        })
        .collect()
}

/// Discrete `u_yy − u_y` at interior node `j` of a row.
#[inline]
pub(crate) fn convexity_term(row: &[f64], j: usize, dy: f64) -> f64 {
    (row[j + 1] - 2.0 * row[j] + row[j - 1]) / (dy * dy) - (row[j + 1] - row[j - 1]) / (2.0 * dy)
}

/// Coefficients of one time step: `A u^{k+1} = B u^k` on interior nodes.
pub(crate) struct StepOperator {
    pub theta: f64,
    /// Half-step diffusion on interior nodes (index 0 ↔ node 1).
    pub alpha: Vec<f64>,
    /// `L = lower·u_{j-1} + diag·u_j + upper·u_{j+1}` per interior node.
    pub l_lower: Vec<f64>,
    pub l_diag: Vec<f64>,
    pub l_upper: Vec<f64>,
}

impl StepOperator {
    pub fn new(a: &Surface, k: usize, theta: f64, rate: f64) -> Self {
        let g = a.grid();
        let dy = g.d_y();
        let m = g.n_y - 1;
        let (r0, r1) = (a.row(k), a.row(k + 1));
        let mut op = Self {
            theta,
            alpha: Vec::with_capacity(m),
            l_lower: Vec::with_capacity(m),
            l_diag: Vec::with_capacity(m),
            l_upper: Vec::with_capacity(m),
        };
        for j in 1..g.n_y {
            let al = 0.5 * (r0[j] + r1[j]);
            let diff = al / (dy * dy);
            let conv = (al + rate) / (2.0 * dy);
            op.alpha.push(al);
            op.l_lower.push(diff + conv);
            op.l_diag.push(-2.0 * diff);
            op.l_upper.push(diff - conv);
        }
        op
    }

    /// `I − θ·dt·L` restricted to interior unknowns.
    pub fn implicit(&self, dt: f64) -> Tridiagonal {
        self.combine(-self.theta * dt)
    }

    /// `I + (1 − θ)·dt·L` restricted to interior unknowns.
    pub fn explicit(&self, dt: f64) -> Tridiagonal {
        self.combine((1.0 - self.theta) * dt)
    }

    fn combine(&self, c: f64) -> Tridiagonal {
        let m = self.alpha.len();
        let mut t = Tridiagonal::zeros(m);
        for k in 0..m {
            t.diag[k] = 1.0 + c * self.l_diag[k];
            if k > 0 {
                t.lower[k] = c * self.l_lower[k];
            }
            if k + 1 < m {
                t.upper[k] = c * self.l_upper[k];
            }
        }
        t
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DupireModel {
    pub params: MarketParams,
    pub bounds: DiffusionBounds,
    /// Fully implicit start-up steps damping the payoff kink.
    pub rannacher_steps: usize,
}

impl DupireModel {
    pub fn new(params: MarketParams, bounds: DiffusionBounds) -> Self {
        Self { params, bounds, rannacher_steps: 2 }
    }

    pub(crate) fn theta(&self, step: usize) -> f64 {
        if step < self.rannacher_steps {
            1.0
        } else {
            0.5
        }
    }

    pub(crate) fn check_surface(&self, a: &Surface) -> Result<()> {
        a.check_finite()?;
        if a.grid().n_y < 2 {
            return invalid("the PDE grid needs at least one interior y node");
        }
        self.bounds.check(a)
    }

    /// Prices `u(τ, y)` for diffusion surface `a`.
    pub fn solve(&self, a: &Surface) -> Result<Surface> {
        self.check_surface(a)?;
        let g = *a.grid();
        let (dt, n) = (g.d_tau(), g.n_y);
        let mut u = Vec::with_capacity(g.node_count());
        u.extend(payoff(&g, &self.params));
        let left = self.params.spot;
        let start = cell_averaged_payoff(&g, &self.params);
        for k in 0..g.n_tau {
            let op = StepOperator::new(a, k, self.theta(k), self.params.rate);
            let prev = if k == 0 { &start[..] } else { &u[k * (n + 1)..(k + 1) * (n + 1)] };
            let b = op.explicit(dt);
            let mut rhs = b.mul_vec(&prev[1..n]);
            let (th, ex) = (op.theta * dt, (1.0 - op.theta) * dt);
            // boundary columns; right boundary is zero
            rhs[0] += ex * op.l_lower[0] * prev[0] + th * op.l_lower[0] * left;
            rhs[n - 2] += ex * op.l_upper[n - 2] * prev[n] + th * op.l_upper[n - 2] * 0.0;
            let interior = op.implicit(dt).solve(&rhs)?;
            u.push(left);
            u.extend(interior);
            u.push(0.0);
        }
        Surface::new(g, u).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// `F(a) = u(a) − u(a0)`.
    pub fn forward_operator(&self, a: &Surface, a0: &Surface) -> Result<Surface> {
        a.check_same_grid(a0)?;
        self.solve(a)?.sub(&self.solve(a0)?)
    }
}

/// Diffusion values recovered pointwise by Dupire's formula; `None` where the
/// denominator `u_yy − u_y` is not safely positive or at boundary nodes.
#[derive(Clone, Debug)]
pub struct DupireInversion {
    pub grid: Grid,
    pub values: Vec<Option<f64>>,
}

impl DupireInversion {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[self.grid.idx(i, j)]
    }

    pub fn masked_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// `a = (u_τ + r·u_y) / (u_yy − u_y)` by central differences, clamped to bounds.
pub fn dupire_inversion(u: &Surface, p: &MarketParams, bounds: &DiffusionBounds, min_denominator: f64) -> DupireInversion {
    let g = *u.grid();
    let (dt, dy) = (g.d_tau(), g.d_y());
    let mut values = vec![None; g.node_count()];
    for i in 1..g.n_tau {
        let row = u.row(i);
        for j in 1..g.n_y {
            let den = convexity_term(row, j, dy);
            if !(den > min_denominator) {
                continue;
            }
            let u_y = (row[j + 1] - row[j - 1]) / (2.0 * dy);
            let u_tau = (u.get(i + 1, j) - u.get(i - 1, j)) / (2.0 * dt);
            values[g.idx(i, j)] = Some(bounds.clamp((u_tau + p.rate * u_y) / den));
        }
    }
    DupireInversion { grid: g, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::black_scholes_call;

    fn model() -> DupireModel {
        DupireModel::new(MarketParams::default(), DiffusionBounds::default())
    }

    #[test]
    fn payoff_values() {
        let g = Grid::new(0.0, 1.0, -1.0, 2f64.ln(), 1, 2).unwrap();
        let p = MarketParams::new(2.0, 0.0).unwrap();
        let v = payoff(&g, &p);
        // in the money: K = 2e^{-1} < S0
        assert!((v[0] - 2.0 * (1.0 - (-1f64).exp())).abs() < 1e-15);
        // out of the money: K = 2·S0
        assert_eq!(v[2], 0.0);
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 1, 2).unwrap();
        assert_eq!(payoff(&g, &p)[1], 0.0);
    }

    #[test]
    fn boundary_and_initial_rows() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 20, 50).unwrap();
        let a = Surface::from_fn(g, |t, y| 0.05 + 0.02 * (t + y).sin().abs());
        let u = model().solve(&a).unwrap();
        assert_eq!(u.row(0), payoff(&g, &MarketParams::default()).as_slice());
        for i in 0..g.rows() {
            assert_eq!(u.get(i, g.n_y), 0.0);
        }
        for i in 1..g.rows() {
            assert_eq!(u.get(i, 0), 1.0);
        }
    }

    #[test]
    fn constant_vol_matches_black_scholes() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 400, 200).unwrap();
        let u = model().solve(&Surface::constant(g, 0.08)).unwrap();
        let bs = black_scholes_call(1.0, 1.0, 1.0, 0.0, 0.4);
        assert!((u.get(400, 100) - bs).abs() / bs < 1e-3);
    }

    #[test]
    fn prices_are_bounded_and_decreasing() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 50, 100).unwrap();
        let a = Surface::from_fn(g, |t, y| 0.03 + 0.05 * (1.0 + (3.0 * y + t).cos()) / 2.0);
        let u = model().solve(&a).unwrap();
        for i in 0..g.rows() {
            let row = u.row(i);
            for j in 0..g.n_y {
                assert!(row[j + 1] <= row[j] + 1e-10);
                assert!(row[j] >= -1e-10 && row[j] <= 1.0 + 1e-10);
            }
        }
    }

    #[test]
    fn out_of_bounds_diffusion_is_rejected() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 4, 10).unwrap();
        assert!(matches!(model().solve(&Surface::constant(g, 5.0)), Err(Error::InvalidInput(_))));
        assert!(model().solve(&Surface::constant(g, 0.0)).is_err());
    }

    #[test]
    fn forward_operator_vanishes_at_reference() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 10, 20).unwrap();
        let a0 = Surface::constant(g, 0.08);
        let f = model().forward_operator(&a0, &a0).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        let other = Grid::new(0.0, 1.0, -5.0, 5.0, 10, 10).unwrap();
        assert!(model().forward_operator(&a0, &Surface::constant(other, 0.08)).is_err());
    }

    #[test]
    fn forward_operator_telescopes() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 10, 20).unwrap();
        let m = model();
        let (a, b) = (Surface::constant(g, 0.1), Surface::constant(g, 0.06));
        for a0 in [Surface::constant(g, 0.08), Surface::constant(g, 0.02)] {
            let diff = m.forward_operator(&a, &a0).unwrap().sub(&m.forward_operator(&b, &a0).unwrap()).unwrap();
            let direct = m.solve(&a).unwrap().sub(&m.solve(&b).unwrap()).unwrap();
            for (x, y) in diff.values().iter().zip(direct.values()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inversion_recovers_constant_diffusion() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 200, 200).unwrap();
        let u = model().solve(&Surface::constant(g, 0.08)).unwrap();
        let inv = dupire_inversion(&u, &MarketParams::default(), &DiffusionBounds::default(), 1e-8);
        for i in 60..200 {
            for j in 80..=120 {
                let v = inv.get(i, j).expect("interior node near the money");
                assert!((v - 0.08).abs() / 0.08 < 5e-2, "({i},{j}) -> {v}");
            }
        }
    }

    #[test]
    fn inversion_masks_degenerate_denominators() {
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 10, 10).unwrap();
        let b = DiffusionBounds::default();
        // u = y gives u_yy − u_y = −1; u constant gives 0
        for u in [Surface::from_fn(g, |_, y| y), Surface::constant(g, 0.3)] {
            let inv = dupire_inversion(&u, &MarketParams::default(), &b, 1e-10);
            assert_eq!(inv.masked_count(), g.node_count());
        }
    }

    #[test]
    fn stationary_prices_clamp_to_lower_bound() {
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 10, 10).unwrap();
        let b = DiffusionBounds::default();
        let u = Surface::from_fn(g, |_, y| (-y).exp());
        let inv = dupire_inversion(&u, &MarketParams::default(), &b, 1e-10);
        assert_eq!(inv.get(5, 5), Some(b.lower));
    }
}
