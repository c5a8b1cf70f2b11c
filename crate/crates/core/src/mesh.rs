//! Parameter meshes: coarse lattices carrying basis coefficients, their
//! prolongation onto a PDE grid, and projection back.

use crate::error::{invalid, Result};
use crate::grid::{h1_norm, Grid, Surface};
use crate::linalg::conjugate_gradient;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    /// Tensor hat functions; interpolating at lattice nodes.
    Bilinear,
    /// Tensor uniform cubic B-splines with replicated end coefficients.
    /// Weights are nonnegative and sum to one, so coefficient bounds carry
    /// over to the prolongated field.
    BicubicSpline,
}

impl std::str::FromStr for BasisKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" | "linear" => Ok(Self::Bilinear),
            "spline" | "bicubic" | "bicubic-spline" => Ok(Self::BicubicSpline),
            other => invalid(format!("unknown basis `{other}`")),
        }
    }
}

impl std::fmt::Display for BasisKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Bilinear => "bilinear",
            Self::BicubicSpline => "spline",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeshLevel {
    lattice: Grid,
    basis: BasisKind,
    coefficients: Vec<f64>,
}

impl MeshLevel {
    /// A level over the same domain as `domain` with the given interval counts; coefficients start at zero.
    pub fn new(domain: &Grid, n_tau_c: usize, n_y_c: usize, basis: BasisKind) -> Result<Self> {
        let lattice = domain.with_counts(n_tau_c, n_y_c)?;
        Ok(Self { lattice, basis, coefficients: vec![0.0; lattice.node_count()] })
    }

    pub fn with_coefficients(mut self, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != self.lattice.node_count() {
            return invalid(format!(
                "mesh level has {} nodes, got {} coefficients",
                self.lattice.node_count(),
                coefficients.len()
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return invalid("non-finite mesh coefficient");
        }
        self.coefficients = coefficients;
        Ok(self)
    }

    pub fn filled(mut self, c: f64) -> Self {
        self.coefficients.iter_mut().for_each(|v| *v = c);
        self
    }

    pub fn lattice(&self) -> &Grid {
        &self.lattice
    }

    pub fn basis(&self) -> BasisKind {
        self.basis
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn n_tau_c(&self) -> usize {
        self.lattice.n_tau
    }

    pub fn n_y_c(&self) -> usize {
        self.lattice.n_y
    }

    pub fn node_count(&self) -> usize {
        self.lattice.node_count()
    }

    /// Coefficients viewed as a surface on the coarse lattice.
    pub fn as_lattice_surface(&self) -> Surface {
        Surface::new(self.lattice, self.coefficients.clone()).expect("coefficients are finite")
    }
}

/// Ordered levels with strictly increasing node counts over one domain.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    levels: Vec<MeshLevel>,
}

impl MeshHierarchy {
    pub fn new(levels: Vec<MeshLevel>) -> Result<Self> {
        if levels.is_empty() {
            return invalid("mesh hierarchy needs at least one level");
        }
        for w in levels.windows(2) {
            if !w[0].lattice.same_domain(&w[1].lattice) {
                return invalid("hierarchy levels must share a domain");
            }
            let (a, b) = (&w[0].lattice, &w[1].lattice);
            if b.n_tau < a.n_tau || b.n_y < a.n_y || b.node_count() <= a.node_count() {
                return invalid(format!(
                    "level {}x{} does not refine {}x{}",
                    b.n_tau, b.n_y, a.n_tau, a.n_y
                ));
            }
        }
        Ok(Self { levels })
    }

    /// Like [`MeshHierarchy::new`] but also requires every level's nodes to be
    /// a subset of the next level's nodes.
    pub fn nested(levels: Vec<MeshLevel>) -> Result<Self> {
        let h = Self::new(levels)?;
        if !h.is_nested() {
            return invalid("hierarchy levels are not nested");
        }
        Ok(h)
    }

    pub fn is_nested(&self) -> bool {
        self.levels
            .windows(2)
            .all(|w| w[1].lattice.injection_strides(&w[0].lattice).is_some())
    }

    pub fn levels(&self) -> &[MeshLevel] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

type Weights1d = Vec<(usize, f64)>;

fn hat_weights(k: usize, n_fine: usize, n_c: usize) -> Weights1d {
    // position k·n_c/n_fine in coarse units, kept rational for exactness
    let num = k * n_c;
    let i0 = (num / n_fine).min(n_c - 1);
    let t = (num - i0 * n_fine) as f64 / n_fine as f64;
    let mut w = vec![(i0, 1.0 - t)];
    if t > 0.0 {
        w.push((i0 + 1, t));
    }
    w
}

fn bspline_weights(k: usize, n_fine: usize, n_c: usize) -> Weights1d {
    let num = k * n_c;
    let i0 = (num / n_fine).min(n_c - 1);
    let t = (num - i0 * n_fine) as f64 / n_fine as f64;
    let omt = 1.0 - t;
    let raw = [
        (i0 as isize - 1, omt * omt * omt / 6.0),
        (i0 as isize, (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0),
        (i0 as isize + 1, (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0),
        (i0 as isize + 2, t * t * t / 6.0),
    ];
    let mut w: Weights1d = Vec::with_capacity(4);
    for (idx, v) in raw {
        if v == 0.0 {
            continue;
        }
        let idx = idx.clamp(0, n_c as isize) as usize;
        match w.iter_mut().find(|(i, _)| *i == idx) {
            Some(e) => e.1 += v,
            None => w.push((idx, v)),
        }
    }
    w
}

/// Sparse linear map from mesh coefficients to values on a PDE grid.
#[derive(Clone, Debug)]
pub struct Prolongation {
    lattice: Grid,
    grid: Grid,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl Prolongation {
    pub fn new(lattice: &Grid, basis: BasisKind, grid: &Grid) -> Result<Self> {
        if !lattice.same_domain(grid) {
            return invalid("mesh and grid cover different domains");
        }
        if grid.n_tau < lattice.n_tau || grid.n_y < lattice.n_y {
            return invalid(format!(
                "grid {}x{} is coarser than mesh {}x{}",
                grid.n_tau, grid.n_y, lattice.n_tau, lattice.n_y
            ));
        }
        let w1d = |k, nf, nc| match basis {
            BasisKind::Bilinear => hat_weights(k, nf, nc),
            BasisKind::BicubicSpline => bspline_weights(k, nf, nc),
        };
        let wt: Vec<Weights1d> = (0..grid.rows()).map(|i| w1d(i, grid.n_tau, lattice.n_tau)).collect();
        let wy: Vec<Weights1d> = (0..grid.cols()).map(|j| w1d(j, grid.n_y, lattice.n_y)).collect();
        let mut offsets = Vec::with_capacity(grid.node_count() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in &wt {
            for col in &wy {
                for &(ci, a) in row {
                    for &(cj, b) in col {
                        cols.push(lattice.idx(ci, cj));
                        weights.push(a * b);
                    }
                }
                offsets.push(cols.len());
            }
        }
        Ok(Self { lattice: *lattice, grid: *grid, offsets, cols, weights })
    }

    pub fn for_level(level: &MeshLevel, grid: &Grid) -> Result<Self> {
        Self::new(&level.lattice, level.basis, grid)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lattice(&self) -> &Grid {
        &self.lattice
    }

    pub fn apply(&self, coefficients: &[f64]) -> Vec<f64> {
        (0..self.grid.node_count())
            .map(|k| {
                (self.offsets[k]..self.offsets[k + 1])
                    .map(|e| self.weights[e] * coefficients[self.cols[e]])
                    .sum()
            })
            .collect()
    }

    pub fn apply_transpose(&self, fine: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.lattice.node_count()];
        for (k, &v) in fine.iter().enumerate() {
            for e in self.offsets[k]..self.offsets[k + 1] {
                out[self.cols[e]] += self.weights[e] * v;
            }
        }
        out
    }
}

/// Evaluates the basis expansion of `m` at every node of `g`.
pub fn prolongate(m: &MeshLevel, g: &Grid) -> Result<Surface> {
    let p = Prolongation::for_level(m, g)?;
    Surface::new(*g, p.apply(&m.coefficients))
}

/// Coefficients on `template`'s lattice approximating `s`: bilinear sampling at
/// lattice nodes for the hat basis, weighted least squares for splines.
pub fn project(s: &Surface, template: &MeshLevel) -> Result<MeshLevel> {
    let lattice = template.lattice;
    let sampled: Vec<f64> = (0..lattice.rows())
        .flat_map(|i| (0..lattice.cols()).map(move |j| (i, j)))
        .map(|(i, j)| s.sample_bilinear(lattice.tau(i), lattice.y(j)))
        .collect();
    let coefficients = match template.basis {
        BasisKind::Bilinear => sampled,
        BasisKind::BicubicSpline => {
            let p = Prolongation::new(&lattice, template.basis, s.grid())?;
            let w = s.grid().weights();
            let wf: Vec<f64> = s.values().iter().zip(&w).map(|(v, w)| v * w).collect();
            let rhs = p.apply_transpose(&wf);
            let normal = |c: &[f64]| {
                let f = p.apply(c);
                let wf: Vec<f64> = f.iter().zip(&w).map(|(v, w)| v * w).collect();
                p.apply_transpose(&wf)
            };
            conjugate_gradient(normal, &rhs, Some(&sampled), 1e-13, 10 * lattice.node_count() + 100)
        }
    };
    MeshLevel { lattice, basis: template.basis, coefficients: vec![] }.with_coefficients(coefficients)
}

/// Empirical domain-discretization error: H¹ distance between `a_true` and
/// its projection onto `m`, prolongated back to `a_true`'s grid.
pub fn restrict_measure_gamma(a_true: &Surface, m: &MeshLevel) -> Result<f64> {
    let projected = project(a_true, m)?;
    let back = prolongate(&projected, a_true.grid())?;
    h1_norm(&a_true.sub(&back)?)
}
