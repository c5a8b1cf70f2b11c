//! Convex penalties `f_{a0}`, their gradients and Bregman distances.
//!
//! Gradients are returned in their L² representation: `⟨gradient(a), h⟩_{L²}`
//! is the directional derivative of `evaluate` at `a` along `h`, with the
//! trapezoidal inner product of [`crate::grid`].

use std::fmt;
use std::str::FromStr;

use crate::dupire::DiffusionBounds;
use crate::error::{invalid, Error, Result};
use crate::grid::{inner, weighted_dot, Grid, Surface};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyKind {
    L2Squared,
    H1Squared,
    /// `Σ_{j<n} ⟨a − a0, φ_j⟩²` over the first `n` orthonormal cosine modes.
    FiniteQuadratic(usize),
    /// `∫ a log(a/a0) − (a − a0)`.
    KullbackLeibler,
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2Squared),
            "h1" => Ok(Self::H1Squared),
            "kl" => Ok(Self::KullbackLeibler),
            other => match other.strip_prefix("modes:").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => Ok(Self::FiniteQuadratic(n)),
                _ => invalid(format!("unknown penalty `{other}` (expected l2, h1, kl or modes:<n>)")),
            },
        }
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::L2Squared => f.write_str("l2"),
            Self::H1Squared => f.write_str("h1"),
            Self::FiniteQuadratic(n) => write!(f, "modes:{n}"),
            Self::KullbackLeibler => f.write_str("kl"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Penalty {
    kind: PenaltyKind,
    reference: Surface,
    modes: Vec<Surface>,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, reference: Surface) -> Result<Self> {
        reference.check_finite()?;
        if kind == PenaltyKind::KullbackLeibler && reference.values().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("KL reference must be strictly positive".into()));
        }
        let modes = match kind {
            PenaltyKind::FiniteQuadratic(n) => cosine_modes(reference.grid(), n)?,
            _ => Vec::new(),
        };
        Ok(Self { kind, reference, modes })
    }

    /// As [`Penalty::new`], additionally requiring the reference to be admissible.
    pub fn within_bounds(kind: PenaltyKind, reference: Surface, bounds: &DiffusionBounds) -> Result<Self> {
        bounds.check(&reference)?;
        Self::new(kind, reference)
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn reference(&self) -> &Surface {
        &self.reference
    }

    pub fn modes(&self) -> &[Surface] {
        &self.modes
    }

    fn check_arg(&self, a: &Surface) -> Result<()> {
        a.check_same_grid(&self.reference)?;
        a.check_finite()?;
        if self.kind == PenaltyKind::KullbackLeibler {
            if let Some(k) = a.values().iter().position(|&v| v <= 0.0) {
                return Err(Error::Domain(format!("KL needs positive arguments, got {} at {k}", a.values()[k])));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, a: &Surface) -> Result<f64> {
        self.check_arg(a)?;
        let g = a.grid();
        let d = a.sub(&self.reference)?;
        Ok(match self.kind {
            PenaltyKind::L2Squared => inner(&d, &d)?,
            PenaltyKind::H1Squared => {
                let q = g.h1_apply(d.values());
                q.iter().zip(d.values()).map(|(x, y)| x * y).sum()
            }
            PenaltyKind::FiniteQuadratic(_) => self.mode_coefficients(&d)?.iter().map(|c| c * c).sum(),
            PenaltyKind::KullbackLeibler => {
                let integrand: Vec<f64> = a
                    .values()
                    .iter()
                    .zip(self.reference.values())
                    .map(|(&x, &x0)| x * (x / x0).ln() - (x - x0))
                    .collect();
                g.weights().iter().zip(&integrand).map(|(w, v)| w * v).sum()
            }
        })
    }

    fn mode_coefficients(&self, d: &Surface) -> Result<Vec<f64>> {
        self.modes.iter().map(|phi| inner(d, phi)).collect()
    }

    /// Euclidean gradient with respect to nodal values (`W ×` the L² representation).
    pub fn gradient_euclidean(&self, a: &Surface) -> Result<Vec<f64>> {
        let l2 = self.gradient(a)?;
        Ok(l2.values().iter().zip(a.grid().weights()).map(|(g, w)| g * w).collect())
    }

    pub fn gradient(&self, a: &Surface) -> Result<Surface> {
        self.check_arg(a)?;
        let g = *a.grid();
        let d = a.sub(&self.reference)?;
        match self.kind {
            PenaltyKind::L2Squared => Ok(d.scale(2.0)),
            PenaltyKind::H1Squared => {
                // 2(d − Δd) with the Neumann five-point Laplacian
                let q = g.h1_apply(d.values());
                let w = g.weights();
                Surface::new(g, q.iter().zip(&w).map(|(x, w)| 2.0 * x / w).collect())
            }
            PenaltyKind::FiniteQuadratic(_) => {
                let mut out = vec![0.0; g.node_count()];
                for (c, phi) in self.mode_coefficients(&d)?.iter().zip(&self.modes) {
                    out.iter_mut().zip(phi.values()).for_each(|(o, p)| *o += 2.0 * c * p);
                }
                Surface::new(g, out)
            }
            PenaltyKind::KullbackLeibler => a.zip_with(&self.reference, |x, x0| (x / x0).ln()),
        }
    }

    /// The surface whose gradient is `zeta`. Not available for `modes:n`,
    /// whose gradients span only the mode space.
    pub fn inverse_gradient(&self, zeta: &Surface) -> Result<Surface> {
        zeta.check_same_grid(&self.reference)?;
        let g = *zeta.grid();
        match self.kind {
            PenaltyKind::L2Squared => self.reference.add(&zeta.scale(0.5)),
            PenaltyKind::H1Squared => {
                let w = g.weights();
                let rhs: Vec<f64> = zeta.values().iter().zip(&w).map(|(z, w)| 0.5 * z * w).collect();
                self.reference.add(&Surface::new(g, sobolev_smooth(&g, &rhs)?)?)
            }
            PenaltyKind::KullbackLeibler => self.reference.zip_with(zeta, |x0, z| x0 * z.exp()),
            PenaltyKind::FiniteQuadratic(n) => invalid(format!("modes:{n} has no inverse gradient on the full grid")),
        }
    }

    /// Sobolev-smoothed gradient `g_s` solving `(I − Δ) g_s = gradient(a)`.
    pub fn smoothed_gradient(&self, a: &Surface) -> Result<Surface> {
        let e = self.gradient_euclidean(a)?;
        Surface::new(*a.grid(), sobolev_smooth(a.grid(), &e)?)
    }

    /// `f(a2) − f(a1) − ⟨∇f(a1), a2 − a1⟩`.
    pub fn bregman_distance(&self, a2: &Surface, a1: &Surface) -> Result<f64> {
        let grad = self.gradient(a1)?;
        Ok(self.evaluate(a2)? - self.evaluate(a1)? - inner(&grad, &a2.sub(a1)?)?)
    }
}

/// Boltzmann–Shannon entropy `∫ a log a`.
pub fn entropy(a: &Surface) -> Result<f64> {
    check_positive(a)?;
    let v: Vec<f64> = a.values().iter().map(|&x| x * x.ln()).collect();
    Ok(a.grid().weights().iter().zip(&v).map(|(w, x)| w * x).sum())
}

pub fn entropy_gradient(a: &Surface) -> Result<Surface> {
    check_positive(a)?;
    Ok(a.map(|x| x.ln() + 1.0))
}

/// Bregman distance of the entropy; coincides with KL(a2 ‖ a1).
pub fn entropy_bregman(a2: &Surface, a1: &Surface) -> Result<f64> {
    a2.check_same_grid(a1)?;
    Ok(entropy(a2)? - entropy(a1)? - inner(&entropy_gradient(a1)?, &a2.sub(a1)?)?)
}

fn check_positive(a: &Surface) -> Result<()> {
    match a.values().iter().position(|&v| !(v > 0.0)) {
        Some(k) => Err(Error::Domain(format!("entropy needs positive values, got {} at {k}", a.values()[k]))),
        None => Ok(()),
    }
}

/// Solves `(W + K) x = rhs`, i.e. maps a Euclidean gradient to its H¹ Riesz representer.
pub fn sobolev_smooth(g: &Grid, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(g.h1_factor()?.solve(rhs))
}

/// First `n` tensor cosine modes, ordered by total frequency and orthonormalized
/// in the discrete L² inner product.
pub fn cosine_modes(g: &Grid, n: usize) -> Result<Vec<Surface>> {
    if n > g.node_count() {
        return invalid(format!("{n} modes exceed the {} grid nodes", g.node_count()));
    }
    let (lt, ly) = (g.tau_max - g.tau_min, g.y_max - g.y_min);
    let mut freqs = Vec::new();
    let mut total = 0;
    while freqs.len() < n {
        for p in 0..=total {
            let q = total - p;
            if p <= g.n_tau && q <= g.n_y {
                freqs.push((p, q));
            }
        }
        total += 1;
    }
    freqs.truncate(n);
    let w = g.weights();
    let mut modes: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (p, q) in freqs {
        let s = Surface::from_fn(*g, |t, y| {
            (p as f64 * std::f64::consts::PI * (t - g.tau_min) / lt).cos()
                * (q as f64 * std::f64::consts::PI * (y - g.y_min) / ly).cos()
        });
        let mut v = s.into_values();
        for _ in 0..2 {
            for m in &modes {
                let c = weighted_dot(&w, &v, m);
                v.iter_mut().zip(m).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = weighted_dot(&w, &v, &v).sqrt();
        if norm < 1e-10 {
            return Err(Error::Numerical("cosine modes are linearly dependent on this grid".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        modes.push(v);
    }
    modes.into_iter().map(|v| Surface::new(*g, v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> Grid {
        Grid::new(0.0, 1.0, 0.0, 1.0, 8, 8).unwrap()
    }

    fn field(g: Grid, s: f64) -> Surface {
        Surface::from_fn(g, move |t, y| 0.08 + 0.03 * (s * t + 2.0 * y).sin() + 0.01 * s)
    }

    fn all_kinds() -> [PenaltyKind; 4] {
        [
            PenaltyKind::L2Squared,
            PenaltyKind::H1Squared,
            PenaltyKind::FiniteQuadratic(6),
            PenaltyKind::KullbackLeibler,
        ]
    }

    #[test]
    fn parse_round_trip() {
        for k in all_kinds() {
            assert_eq!(k.to_string().parse::<PenaltyKind>().unwrap(), k);
        }
        assert!("modes:0".parse::<PenaltyKind>().is_err());
        assert!("tv".parse::<PenaltyKind>().is_err());
    }

    #[test]
    fn zero_at_reference() {
        let g = unit_grid();
        let a0 = field(g, 1.0);
        for k in all_kinds() {
            let p = Penalty::new(k, a0.clone()).unwrap();
            assert_eq!(p.evaluate(&a0).unwrap(), 0.0, "{k}");
            assert!(p.gradient(&a0).unwrap().values().iter().all(|&v| v == 0.0), "{k}");
        }
    }

    #[test]
    fn l2_constant_offset() {
        let g = Grid::new(0.0, 2.0, -1.0, 2.0, 5, 6).unwrap();
        let p = Penalty::new(PenaltyKind::L2Squared, Surface::constant(g, 0.1)).unwrap();
        let v = p.evaluate(&Surface::constant(g, 0.4)).unwrap();
        assert!((v - 0.09 * 6.0).abs() < 1e-14);
        let a = field(g, 2.0);
        let grad = p.gradient(&a).unwrap();
        for (gv, av) in grad.values().iter().zip(a.values()) {
            assert_eq!(*gv, 2.0 * (av - 0.1));
        }
    }

    #[test]
    fn kl_constant_closed_form() {
        let g = unit_grid();
        let p = Penalty::new(PenaltyKind::KullbackLeibler, Surface::constant(g, 1.0)).unwrap();
        let a = Surface::constant(g, 2.0);
        assert!((p.evaluate(&a).unwrap() - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-14);
        let grad = p.gradient(&a).unwrap();
        assert!(grad.values().iter().all(|&v| (v - 2f64.ln()).abs() < 1e-15));
        assert!(matches!(p.evaluate(&Surface::constant(g, -1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = unit_grid();
        let a0 = field(g, 0.5);
        let a = field(g, 2.5);
        let h = Surface::from_fn(g, |t, y| 0.01 * (3.0 * t * y).cos());
        for k in all_kinds() {
            let p = Penalty::new(k, a0.clone()).unwrap();
            let eps = 1e-5;
            let fd = (p.evaluate(&a.add(&h.scale(eps)).unwrap()).unwrap()
                - p.evaluate(&a.add(&h.scale(-eps)).unwrap()).unwrap())
                / (2.0 * eps);
            let an = inner(&p.gradient(&a).unwrap(), &h).unwrap();
            assert!((fd - an).abs() <= 1e-6 * an.abs(), "{k}: {fd} vs {an}");
        }
    }

    #[test]
    fn l2_bregman_is_squared_distance() {
        let g = unit_grid();
        let p = Penalty::new(PenaltyKind::L2Squared, field(g, 0.0)).unwrap();
        let (a, b) = (field(g, 1.0), field(g, 3.0));
        let d = a.sub(&b).unwrap();
        let expect = inner(&d, &d).unwrap();
        assert!((p.bregman_distance(&a, &b).unwrap() - expect).abs() <= 1e-15 * (1.0 + expect));
        assert_eq!(p.bregman_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn entropy_values() {
        let g = unit_grid();
        assert_eq!(entropy(&Surface::constant(g, 1.0)).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((entropy(&Surface::constant(g, e)).unwrap() - e).abs() < 1e-14);
        assert!((entropy(&Surface::constant(g, 0.5)).unwrap() + 2f64.ln() / 2.0).abs() < 1e-14);
        assert!(entropy(&Surface::constant(g, 0.0)).is_err());
    }

    #[test]
    fn entropy_bregman_is_kl() {
        let g = unit_grid();
        let v = entropy_bregman(&Surface::constant(g, 2.0), &Surface::constant(g, 1.0)).unwrap();
        assert!((v - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-14);
        let (a, a0) = (field(g, 1.0), field(g, 4.0));
        let kl = Penalty::new(PenaltyKind::KullbackLeibler, a0.clone()).unwrap();
        assert!((entropy_bregman(&a, &a0).unwrap() - kl.evaluate(&a).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn cosine_modes_are_orthonormal() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 10, 20).unwrap();
        let modes = cosine_modes(&g, 12).unwrap();
        for (i, a) in modes.iter().enumerate() {
            for (j, b) in modes.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((inner(a, b).unwrap() - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn more_modes_capture_more_energy() {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 10, 20).unwrap();
        let a0 = Surface::constant(g, 0.08);
        let a = Surface::from_fn(g, |t, y| 0.08 + 0.02 * (-(y * y)).exp() * (1.0 + t));
        let mut prev = 0.0;
        for n in 1..15 {
            let v = Penalty::new(PenaltyKind::FiniteQuadratic(n), a0.clone()).unwrap().evaluate(&a).unwrap();
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn smoothing_inverts_h1_operator() {
        let g = unit_grid();
        let rhs = field(g, 1.0).into_values();
        let x = sobolev_smooth(&g, &rhs).unwrap();
        let back = g.h1_apply(&x);
        for (a, b) in back.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-8 * b.abs().max(1e-3));
        }
    }

    #[test]
    fn inverse_gradient_round_trips() {
        let g = Grid::new(0.0, 1.0, -1.0, 1.0, 8, 12).unwrap();
        let a0 = Surface::from_fn(g, |t, y| 0.08 + 0.01 * t * y);
        let a = Surface::from_fn(g, |t, y| 0.06 + 0.02 * (t + y * y));
        for kind in [PenaltyKind::L2Squared, PenaltyKind::H1Squared, PenaltyKind::KullbackLeibler] {
            let p = Penalty::new(kind, a0.clone()).unwrap();
            let back = p.inverse_gradient(&p.gradient(&a).unwrap()).unwrap();
            for (x, y) in back.values().iter().zip(a.values()) {
                assert!((x - y).abs() < 1e-12, "{kind}");
            }
        }
        let p = Penalty::new(PenaltyKind::FiniteQuadratic(3), a0.clone()).unwrap();
        assert!(p.inverse_gradient(&a0).is_err());
    }
}
