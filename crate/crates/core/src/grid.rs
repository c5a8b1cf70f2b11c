//! Uniform (τ, y) grids, sampled surfaces and the quadrature-based norms used
//! for residuals and penalties.
//!
//! Node `(i, j)` sits at `(tau_min + i·d_tau, y_min + j·d_y)`; storage is
//! row-major with τ as the outer index. All integrals use the tensor
//! trapezoidal rule. Derivative terms of the H¹ norm are integrated edge by
//! edge (forward differences with the trapezoidal weight of the transverse
//! direction), which makes the discrete H¹ form `sᵀ(W + K)s` with `W` the
//! diagonal quadrature weights and `K` the Neumann five-point stiffness.

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::linalg::BandedCholesky;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub tau_min: f64,
    pub tau_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub n_tau: usize,
    pub n_y: usize,
}

impl Grid {
    pub fn new(tau_min: f64, tau_max: f64, y_min: f64, y_max: f64, n_tau: usize, n_y: usize) -> Result<Self> {
        if !(tau_min.is_finite() && tau_max.is_finite() && y_min.is_finite() && y_max.is_finite()) {
            return invalid("grid bounds must be finite");
        }
        if tau_min < 0.0 || tau_max <= tau_min {
            return invalid(format!("need tau_max > tau_min >= 0, got [{tau_min}, {tau_max}]"));
        }
        if y_max <= y_min {
            return invalid(format!("need y_max > y_min, got [{y_min}, {y_max}]"));
        }
        if n_tau == 0 || n_y == 0 {
            return invalid("interval counts must be positive");
        }
        Ok(Self { tau_min, tau_max, y_min, y_max, n_tau, n_y })
    }

    /// Same domain, different resolution.
    pub fn with_counts(&self, n_tau: usize, n_y: usize) -> Result<Self> {
        Self::new(self.tau_min, self.tau_max, self.y_min, self.y_max, n_tau, n_y)
    }

    pub fn d_tau(&self) -> f64 {
        (self.tau_max - self.tau_min) / self.n_tau as f64
    }

    pub fn d_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_y as f64
    }

    pub fn tau(&self, i: usize) -> f64 {
        if i == self.n_tau {
            self.tau_max
        } else {
            self.tau_min + i as f64 * self.d_tau()
        }
    }

    pub fn y(&self, j: usize) -> f64 {
        if j == self.n_y {
            self.y_max
        } else {
            self.y_min + j as f64 * self.d_y()
        }
    }

    pub fn rows(&self) -> usize {
        self.n_tau + 1
    }

    pub fn cols(&self) -> usize {
        self.n_y + 1
    }

    pub fn node_count(&self) -> usize {
        self.rows() * self.cols()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.n_y + 1) + j
    }

    pub fn area(&self) -> f64 {
        (self.tau_max - self.tau_min) * (self.y_max - self.y_min)
    }

    pub fn same_domain(&self, other: &Grid) -> bool {
        let tol = 1e-12 * (1.0 + self.area());
        (self.tau_min - other.tau_min).abs() <= tol
            && (self.tau_max - other.tau_max).abs() <= tol
            && (self.y_min - other.y_min).abs() <= tol
            && (self.y_max - other.y_max).abs() <= tol
    }

    /// Strides `(s_tau, s_y)` such that coarse node `(i, j)` is fine node
    /// `(i·s_tau, j·s_y)`, if the node sets are nested.
    pub fn injection_strides(&self, coarse: &Grid) -> Option<(usize, usize)> {
        if !self.same_domain(coarse) || !self.n_tau.is_multiple_of(coarse.n_tau) || !self.n_y.is_multiple_of(coarse.n_y) {
            return None;
        }
        Some((self.n_tau / coarse.n_tau, self.n_y / coarse.n_y))
    }

    fn trapezoid_1d(n: usize, h: f64, k: usize) -> f64 {
        if k == 0 || k == n {
            0.5 * h
        } else {
            h
        }
    }

    pub fn weight_tau(&self, i: usize) -> f64 {
        Self::trapezoid_1d(self.n_tau, self.d_tau(), i)
    }

    pub fn weight_y(&self, j: usize) -> f64 {
        Self::trapezoid_1d(self.n_y, self.d_y(), j)
    }

    /// Trapezoidal quadrature weights, one per node.
    pub fn weights(&self) -> Vec<f64> {
        let wy: Vec<f64> = (0..self.cols()).map(|j| self.weight_y(j)).collect();
        let mut w = Vec::with_capacity(self.node_count());
        for i in 0..self.rows() {
            let wt = self.weight_tau(i);
            w.extend(wy.iter().map(|&v| wt * v));
        }
        w
    }

    /// Applies the stiffness part `K` of the discrete H¹ form to `s`.
    pub fn stiffness_apply(&self, s: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count()];
        let (dt, dy) = (self.d_tau(), self.d_y());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let k = self.idx(i, j);
                if i + 1 < self.rows() {
                    let kn = self.idx(i + 1, j);
                    let c = self.weight_y(j) / dt;
                    let diff = s[kn] - s[k];
                    out[kn] += c * diff;
                    out[k] -= c * diff;
                }
                if j + 1 < self.cols() {
                    let kn = self.idx(i, j + 1);
                    let c = self.weight_tau(i) / dy;
                    let diff = s[kn] - s[k];
                    out[kn] += c * diff;
                    out[k] -= c * diff;
                }
            }
        }
        out
    }

    /// Cholesky factor of `W + K`.
    pub fn h1_factor(&self) -> Result<BandedCholesky> {
        let (dt, dy, cols) = (self.d_tau(), self.d_y(), self.cols());
        let w = self.weights();
        BandedCholesky::factor(self.node_count(), cols, |k, d| {
            let (i, j) = (k / cols, k % cols);
            match d {
                0 => {
                    let mut s = w[k];
                    if i > 0 {
                        s += self.weight_y(j) / dt;
                    }
                    if i + 1 < self.rows() {
                        s += self.weight_y(j) / dt;
                    }
                    if j > 0 {
                        s += self.weight_tau(i) / dy;
                    }
                    if j + 1 < cols {
                        s += self.weight_tau(i) / dy;
                    }
                    s
                }
                1 if j > 0 => -self.weight_tau(i) / dy,
                d if d == cols => -self.weight_y(j) / dt,
                _ => 0.0,
            }
        })
    }

    /// Applies `W + K`, the matrix of the discrete H¹ inner product.
    pub fn h1_apply(&self, s: &[f64]) -> Vec<f64> {
        let mut out = self.stiffness_apply(s);
        for (o, (w, v)) in out.iter_mut().zip(self.weights().iter().zip(s)) {
            *o += w * v;
        }
        out
    }
}

/// A real value at every node of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    grid: Grid,
    values: Vec<f64>,
}

impl Surface {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return invalid(format!(
                "surface has {} values but grid has {} nodes",
                values.len(),
                grid.node_count()
            ));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite surface value at flat index {k}"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.node_count()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.node_count());
        for i in 0..grid.rows() {
            let t = grid.tau(i);
            for j in 0..grid.cols() {
                values.push(f(t, grid.y(j)));
            }
        }
        Self { grid, values }
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

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.grid.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &Surface, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &Surface) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Surface) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn check_same_grid(&self, other: &Surface) -> Result<()> {
        if self.grid != other.grid {
            return invalid("surfaces live on different grids");
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(k) => invalid(format!("non-finite surface value at flat index {k}")),
            None => Ok(()),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolation, clamped to the grid domain.
    pub fn sample_bilinear(&self, tau: f64, y: f64) -> f64 {
        let g = &self.grid;
        let (i, ft) = locate(tau, g.tau_min, g.d_tau(), g.n_tau);
        let (j, fy) = locate(y, g.y_min, g.d_y(), g.n_y);
        let v00 = self.get(i, j);
        let v01 = self.get(i, j + 1);
        let v10 = self.get(i + 1, j);
        let v11 = self.get(i + 1, j + 1);
        (1.0 - ft) * ((1.0 - fy) * v00 + fy * v01) + ft * ((1.0 - fy) * v10 + fy * v11)
    }

    /// Node injection onto a coarser grid whose nodes are a subset of ours.
    pub fn restrict_to(&self, coarse: &Grid) -> Result<Self> {
        let (st, sy) = self
            .grid
            .injection_strides(coarse)
            .ok_or_else(|| Error::InvalidInput("coarse grid nodes are not a subset of the fine grid".into()))?;
        let mut values = Vec::with_capacity(coarse.node_count());
        for i in 0..coarse.rows() {
            for j in 0..coarse.cols() {
                values.push(self.get(i * st, j * sy));
            }
        }
        Ok(Self { grid: *coarse, values })
    }

    /// Writes `tau,y,value` rows, τ outer and y inner.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tau", "y", "value"])?;
        for i in 0..self.grid.rows() {
            for j in 0..self.grid.cols() {
                wr.write_record([
                    self.grid.tau(i).to_string(),
                    self.grid.y(j).to_string(),
                    self.get(i, j).to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["tau", "y", "value"] {
            return Err(Error::Format { line: 1, message: "expected header `tau,y,value`".into() });
        }
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            let parse = |idx: usize| -> Result<f64> {
                rec.get(idx)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Format { line, message: format!("bad number in column {}", idx + 1) })
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        if rows.len() < 4 {
            return Err(Error::Format { line: rows.len() + 1, message: "surface needs at least 2x2 nodes".into() });
        }
        let n_cols = rows.iter().take_while(|r| r.0 == rows[0].0).count();
        if n_cols < 2 || !rows.len().is_multiple_of(n_cols) {
            return Err(Error::Format { line: 2, message: "rows do not form a rectangular tau-major grid".into() });
        }
        let n_rows = rows.len() / n_cols;
        let grid = Grid::new(rows[0].0, rows[rows.len() - 1].0, rows[0].1, rows[n_cols - 1].1, n_rows - 1, n_cols - 1)
            .map_err(|e| Error::Format { line: 2, message: e.to_string() })?;
        let tol = 1e-9 * (1.0 + grid.tau_max.abs() + grid.y_max.abs().max(grid.y_min.abs()));
        for (k, &(t, y, _)) in rows.iter().enumerate() {
            let (i, j) = (k / n_cols, k % n_cols);
            if (t - grid.tau(i)).abs() > tol || (y - grid.y(j)).abs() > tol {
                return Err(Error::Format { line: k + 2, message: "node coordinates are not a uniform grid".into() });
            }
        }
        Surface::new(grid, rows.into_iter().map(|r| r.2).collect())
    }
}

fn locate(x: f64, x0: f64, h: f64, n: usize) -> (usize, f64) {
    let s = ((x - x0) / h).clamp(0.0, n as f64);
    let k = (s.floor() as usize).min(n - 1);
    (k, s - k as f64)
}

fn check_norm_input(s: &Surface) -> Result<()> {
    s.check_finite()?;
    if s.grid.rows() < 2 || s.grid.cols() < 2 {
        return invalid("norms need at least 2x2 nodes");
    }
    Ok(())
}

/// Trapezoidal L² inner product of two surfaces on the same grid.
pub fn inner(a: &Surface, b: &Surface) -> Result<f64> {
    a.check_same_grid(b)?;
    Ok(weighted_dot(&a.grid.weights(), &a.values, &b.values))
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

pub fn l2_norm(s: &Surface) -> Result<f64> {
    check_norm_input(s)?;
    Ok(weighted_dot(&s.grid.weights(), &s.values, &s.values).sqrt())
}

/// `∫ s² + s_τ² + s_y²` with edge differences and trapezoidal weights.
pub fn h1_norm_sq(s: &Surface) -> Result<f64> {
    check_norm_input(s)?;
    let q = s.grid.h1_apply(&s.values);
    Ok(q.iter().zip(&s.values).map(|(a, b)| a * b).sum::<f64>().max(0.0))
}

pub fn h1_norm(s: &Surface) -> Result<f64> {
    h1_norm_sq(s).map(f64::sqrt)
}
