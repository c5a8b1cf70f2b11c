//! Minimization of the discrete Tikhonov functional
//!
//! ```text
//! J(c) = ‖u(P c) − u_obs‖² + β f(P c)
//! ```
//!
//! over the coefficients `c` of a mesh level (`P` = prolongation to the PDE
//! grid), by projected gradient descent with Armijo backtracking. Descent
//! directions are Riesz representers on the coefficient lattice (H¹ or L², see
//! [`Metric`]); the trial step of each iteration is a Barzilai–Borwein
//! estimate in that metric.
//!
//! β is chosen by walking a geometric grid downward until the residual meets
//! Morozov's bound, and the mesh level by taking the coarsest level whose
//! residual lies in `[τ₁, τ₂]·max(δ, ρ_m)`.

use std::fmt;
use std::str::FromStr;

use log::debug;

use crate::adjoint::misfit_euclidean;
use crate::dupire::{DiffusionBounds, DupireModel};
use crate::error::{invalid, Error, Result};
use crate::grid::{l2_norm, Grid, Surface};
use crate::linalg::{dot, BandedCholesky};
use crate::mesh::{project, MeshHierarchy, MeshLevel, Prolongation};
use crate::penalty::{Penalty, PenaltyKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaGrid {
    pub beta_max: f64,
    pub ratio: f64,
    pub count: usize,
}

impl BetaGrid {
    pub fn new(beta_max: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(beta_max > 0.0 && beta_max.is_finite()) || !(ratio > 0.0 && ratio < 1.0) || count == 0 {
            return invalid(format!("bad beta grid ({beta_max}, {ratio}, {count})"));
        }
        Ok(Self { beta_max, ratio, count })
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.beta_max * self.ratio.powi(k as i32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Armijo {
    pub c1: f64,
    pub backtrack: f64,
    pub initial_step: f64,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { c1: 1e-4, backtrack: 0.5, initial_step: 1.0 }
    }
}

/// Inner product defining the descent direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    /// `(W + K)⁻¹ g`: Sobolev-smoothed gradient.
    Sobolev,
    /// `W⁻¹ g`: nodal L² gradient.
    Lebesgue,
}

impl Metric {
    /// The metric of the penalty's own space.
    pub fn for_penalty(kind: PenaltyKind) -> Self {
        match kind {
            PenaltyKind::H1Squared => Metric::Sobolev,
            _ => Metric::Lebesgue,
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "h1" | "sobolev" => Ok(Metric::Sobolev),
            "l2" | "lebesgue" => Ok(Metric::Lebesgue),
            other => invalid(format!("unknown metric '{other}'")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Sobolev => "h1",
            Metric::Lebesgue => "l2",
        })
    }
}

enum Riesz {
    Sobolev(Grid, BandedCholesky),
    Lebesgue(Vec<f64>),
}

impl Riesz {
    fn new(metric: Metric, lattice: &Grid) -> Result<Self> {
        Ok(match metric {
            Metric::Sobolev => Riesz::Sobolev(*lattice, lattice.h1_factor()?),
            Metric::Lebesgue => Riesz::Lebesgue(lattice.weights()),
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Riesz::Sobolev(g, _) => g.h1_apply(x),
            Riesz::Lebesgue(w) => x.iter().zip(w).map(|(v, q)| v * q).collect(),
        }
    }

    fn solve(&self, g: &[f64]) -> Vec<f64> {
        match self {
            Riesz::Sobolev(_, f) => f.solve(g),
            Riesz::Lebesgue(w) => g.iter().zip(w).map(|(v, q)| v / q).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CalibrationConfig {
    pub penalty: Penalty,
    pub bounds: DiffusionBounds,
    pub beta_grid: BetaGrid,
    pub max_iters: usize,
    pub armijo: Armijo,
    pub metric: Metric,
    /// Stop when `‖P_box(c − s·d) − c‖_{H¹} ≤ grad_tol·s`.
    pub grad_tol: f64,
    /// Stop when an accepted step lowers the objective by less than this fraction.
    pub obj_tol: f64,
    pub morozov_tau: f64,
    pub mesh_tau1: f64,
    pub mesh_tau2: f64,
}

impl CalibrationConfig {
    pub fn new(penalty: Penalty, bounds: DiffusionBounds) -> Self {
        let metric = Metric::for_penalty(penalty.kind());
        Self {
            penalty,
            bounds,
            beta_grid: BetaGrid { beta_max: 1.0, ratio: 0.5, count: 40 },
            max_iters: 400,
            armijo: Armijo::default(),
            metric,
            grad_tol: 1e-7,
            obj_tol: 1e-9,
            morozov_tau: 1.1,
            mesh_tau1: 1.05,
            mesh_tau2: 1.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        BetaGrid::new(self.beta_grid.beta_max, self.beta_grid.ratio, self.beta_grid.count)?;
        let a = &self.armijo;
        if !(a.c1 > 0.0 && a.c1 < 1.0) || !(a.backtrack > 0.0 && a.backtrack < 1.0) || !(a.initial_step > 0.0) {
            return invalid("armijo parameters need c1, backtrack in (0,1) and a positive initial step");
        }
        if self.max_iters == 0 || !(self.grad_tol >= 0.0) || !(self.obj_tol >= 0.0) {
            return invalid("need max_iters > 0 and nonnegative tolerances");
        }
        if !(self.morozov_tau > 1.0) {
            return invalid("morozov_tau must exceed 1");
        }
        if !(1.0 < self.mesh_tau1 && self.mesh_tau1 < self.mesh_tau2) {
            return invalid("need 1 < mesh_tau1 < mesh_tau2");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub objective: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    /// Objective no longer decreases measurably.
    Stalled,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub a_hat: Surface,
    pub level: MeshLevel,
    pub mesh_level_index: usize,
    pub beta: f64,
    /// `‖u(a_hat) − u_obs‖` in the (masked) L² norm.
    pub residual: f64,
    pub penalty_value: f64,
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<TraceRecord>,
    pub stop: StopReason,
    pub discrepancy_unmet: bool,
    pub band_unmet: bool,
}

impl CalibrationResult {
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIters
    }
}

/// Data and forward model shared by every solve of one calibration.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub model: &'a DupireModel,
    pub u_obs: &'a Surface,
    /// Per-node residual weights in `{0, 1}` (or any nonnegative values).
    pub mask: Option<&'a [f64]>,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a DupireModel, u_obs: &'a Surface) -> Self {
        Self { model, u_obs, mask: None }
    }

    pub fn with_mask(mut self, mask: &'a [f64]) -> Self {
        self.mask = Some(mask);
        self
    }

    /// Masked L² norm of `u − u_obs`.
    pub fn residual_of(&self, u: &Surface) -> Result<f64> {
        let r = u.sub(self.u_obs)?;
        match self.mask {
            None => l2_norm(&r),
            Some(m) => {
                let w = r.grid().weights();
                Ok((0..w.len()).map(|k| w[k] * m[k] * r.values()[k] * r.values()[k]).sum::<f64>().sqrt())
            }
        }
    }
}

struct Evaluation {
    objective: f64,
    misfit: f64,
    penalty: f64,
    grad: Vec<f64>,
}

struct Objective<'a> {
    problem: Problem<'a>,
    penalty: &'a Penalty,
    prolong: Prolongation,
    beta: f64,
}

impl Objective<'_> {
    fn field(&self, c: &[f64]) -> Result<Surface> {
        Surface::new(*self.prolong.grid(), self.prolong.apply(c))
    }

    fn evaluate(&self, c: &[f64], with_grad: bool) -> Result<Evaluation> {
        let a = self.field(c)?;
        let pen = self.penalty.evaluate(&a)?;
        let (misfit, grad) = if with_grad {
            let (misfit, _, mut g) = misfit_euclidean(self.problem.model, &a, self.problem.u_obs, self.problem.mask)?;
            let gp = self.penalty.gradient_euclidean(&a)?;
            g.iter_mut().zip(&gp).for_each(|(x, p)| *x += self.beta * p);
            (misfit, self.prolong.apply_transpose(&g))
        } else {
            let u = self.problem.model.solve(&a)?;
            (self.problem.residual_of(&u)?.powi(2), Vec::new())
        };
        let objective = misfit + self.beta * pen;
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("objective is {objective}")));
        }
        Ok(Evaluation { objective, misfit, penalty: pen, grad })
    }
}

fn clip(c: &mut [f64], b: &DiffusionBounds) {
    c.iter_mut().for_each(|v| *v = b.clamp(*v));
}

/// Minimizes the Tikhonov functional starting from `level`'s coefficients.
pub fn minimize_tikhonov(problem: Problem<'_>, level: &MeshLevel, beta: f64, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return invalid(format!("beta must be positive, got {beta}"));
    }
    let grid = *problem.u_obs.grid();
    cfg.penalty.reference().check_same_grid(problem.u_obs)?;
    if let Some(m) = problem.mask {
        if m.len() != grid.node_count() {
            return invalid("mask length does not match the data grid");
        }
    }
    let obj = Objective { problem, penalty: &cfg.penalty, prolong: Prolongation::for_level(level, &grid)?, beta };
    let lattice = *level.lattice();
    let riesz = Riesz::new(cfg.metric, &lattice)?;

    let mut c = level.coefficients().to_vec();
    clip(&mut c, &cfg.bounds);
    let mut cur = obj.evaluate(&c, true)?;
    let mut dir = riesz.solve(&cur.grad);
    let mut step = cfg.armijo.initial_step;
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let mut s = step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = c.iter().zip(&dir).map(|(x, d)| x - s * d).collect();
            clip(&mut trial, &cfg.bounds);
            let delta: Vec<f64> = trial.iter().zip(&c).map(|(a, b)| a - b).collect();
            let slope = dot(&cur.grad, &delta);
            if slope >= 0.0 {
                // projected step vanished: first-order stationary point
                break;
            }
            let next = obj.evaluate(&trial, false)?;
            if next.objective <= cur.objective + cfg.armijo.c1 * slope {
                accepted = Some((trial, delta));
                break;
            }
            s *= cfg.armijo.backtrack;
        }
        let Some((trial, delta)) = accepted else {
            stop = StopReason::Stalled;
            break;
        };
        let next = obj.evaluate(&trial, true)?;
        iterations += 1;
        trace.push(TraceRecord { objective: next.objective, residual: next.misfit.sqrt(), step: s });

        let moved = dot(&delta, &riesz.apply(&delta)).sqrt();
        let decrease = cur.objective - next.objective;
        let yk: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let curvature = dot(&delta, &yk);
        c = trial;
        cur = next;
        dir = riesz.solve(&cur.grad);

        if moved <= cfg.grad_tol * s {
            stop = StopReason::GradTol;
            break;
        }
        if decrease <= cfg.obj_tol * cur.objective.abs() {
            stop = StopReason::Stalled;
            break;
        }
        step = if curvature > 0.0 { (moved * moved / curvature).clamp(1e-12 * s, 1e6 * s) } else { 2.0 * s };
    }
    debug!("beta {beta:.3e}: {iterations} iterations, objective {:.6e}, stop {stop:?}", cur.objective);

    let a_hat = obj.field(&c)?;
    let residual = problem.residual_of(&problem.model.solve(&a_hat)?)?;
    Ok(CalibrationResult {
        a_hat,
        level: level.clone().with_coefficients(c)?,
        mesh_level_index: 0,
        beta,
        residual,
        penalty_value: cur.penalty,
        objective: cur.objective,
        iterations,
        trace,
        stop,
        discrepancy_unmet: false,
        band_unmet: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaRecord {
    pub beta: f64,
    pub residual: f64,
    pub penalty_value: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct MorozovOutcome {
    pub beta: f64,
    pub result: CalibrationResult,
    pub walk: Vec<BetaRecord>,
}

/// Walks `cfg.beta_grid` downward (warm-started) and stops at the first β with
/// residual ≤ `morozov_tau·eta`. If none qualifies the smallest-β result is
/// returned with `discrepancy_unmet` set.
pub fn select_beta_morozov(problem: Problem<'_>, level: &MeshLevel, eta: f64, cfg: &CalibrationConfig) -> Result<MorozovOutcome> {
    if !(eta > 0.0) {
        return invalid(format!("noise bound eta must be positive, got {eta}"));
    }
    let target = cfg.morozov_tau * eta;
    let mut start = level.clone();
    let mut walk = Vec::new();
    let mut last = None;
    for beta in cfg.beta_grid.values() {
        let res = minimize_tikhonov(problem, &start, beta, cfg)?;
        walk.push(BetaRecord { beta, residual: res.residual, penalty_value: res.penalty_value, iterations: res.iterations });
        start = res.level.clone();
        if res.residual <= target {
            return Ok(MorozovOutcome { beta, result: res, walk });
        }
        last = Some(res);
    }
    let mut result = last.expect("beta grid is nonempty");
    result.discrepancy_unmet = true;
    Ok(MorozovOutcome { beta: result.beta, result, walk })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelDiagnostic {
    pub index: usize,
    pub n_tau_c: usize,
    pub n_y_c: usize,
    pub n_nodes: usize,
    pub beta: f64,
    pub residual: f64,
    pub l2_error: Option<f64>,
    pub in_band: bool,
    pub discrepancy_unmet: bool,
}

#[derive(Clone, Debug)]
pub struct MeshSelection {
    pub index: usize,
    pub result: CalibrationResult,
    pub diagnostics: Vec<LevelDiagnostic>,
    pub results: Vec<CalibrationResult>,
}

impl MeshSelection {
    pub fn band_unmet(&self) -> bool {
        self.result.band_unmet
    }
}

/// Distance of `r` from the interval `[lo, hi]`.
fn band_distance(r: f64, lo: f64, hi: f64) -> f64 {
    if r < lo {
        lo - r
    } else if r > hi {
        r - hi
    } else {
        0.0
    }
}

/// Runs the Morozov walk on every level (coarse to fine) and picks the
/// coarsest level whose residual lies in `[τ₁, τ₂]·max(δ, ρ_m)`.
///
/// Each level starts from the previous level's solution, projected. When
/// `truth` is given, the L² error of every level is recorded.
pub fn select_mesh_level(
    problem: Problem<'_>,
    hierarchy: &MeshHierarchy,
    delta: f64,
    rho_m: f64,
    cfg: &CalibrationConfig,
    truth: Option<&Surface>,
) -> Result<MeshSelection> {
    let noise = delta.max(rho_m);
    if !(noise > 0.0) {
        return invalid("need delta > 0 or rho_m > 0");
    }
    let (lo, hi) = (cfg.mesh_tau1 * noise, cfg.mesh_tau2 * noise);
    let mut results: Vec<CalibrationResult> = Vec::with_capacity(hierarchy.len());
    let mut diagnostics = Vec::with_capacity(hierarchy.len());
    for (index, template) in hierarchy.levels().iter().enumerate() {
        let source = results.last().map_or(cfg.penalty.reference(), |r: &CalibrationResult| &r.a_hat);
        let start = project(source, template)?;
        let mut out = select_beta_morozov(problem, &start, noise, cfg)?;
        out.result.mesh_level_index = index;
        let l2_error = truth.map(|t| out.result.a_hat.sub(t).and_then(|d| l2_norm(&d))).transpose()?;
        let r = out.result.residual;
        diagnostics.push(LevelDiagnostic {
            index,
            n_tau_c: template.n_tau_c(),
            n_y_c: template.n_y_c(),
            n_nodes: template.node_count(),
            beta: out.beta,
            residual: r,
            l2_error,
            in_band: lo <= r && r <= hi,
            discrepancy_unmet: out.result.discrepancy_unmet,
        });
        debug!("level {index} ({}x{}): residual {r:.4e}, band [{lo:.4e}, {hi:.4e}]", template.n_tau_c(), template.n_y_c());
        results.push(out.result);
    }
    let index = match diagnostics.iter().position(|d| d.in_band) {
        Some(i) => i,
        None => {
            let mut best = 0;
            for (i, d) in diagnostics.iter().enumerate() {
                if band_distance(d.residual, lo, hi) < band_distance(diagnostics[best].residual, lo, hi) {
                    best = i;
                }
            }
            results[best].band_unmet = true;
            best
        }
    };
    Ok(MeshSelection { index, result: results[index].clone(), diagnostics, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dupire::MarketParams;
    use crate::grid::Grid;
    use crate::mesh::BasisKind;

    fn setup() -> (Grid, DupireModel, Surface) {
        let g = Grid::new(0.0, 1.0, -5.0, 5.0, 20, 50).unwrap();
        let model = DupireModel::new(MarketParams::default(), DiffusionBounds::default());
        let truth = Surface::from_fn(g, |t, y| 0.08 - 0.03 * (-(y * y) / 0.3).exp() * (1.0 - 0.3 * t));
        (g, model, truth)
    }

    fn config(g: Grid, kind: PenaltyKind) -> CalibrationConfig {
        let p = Penalty::new(kind, Surface::constant(g, 0.08)).unwrap();
        CalibrationConfig::new(p, DiffusionBounds::default())
    }

    #[test]
    fn reference_is_a_fixed_point_on_consistent_data() {
        let (g, model, _) = setup();
        let u = model.solve(&Surface::constant(g, 0.08)).unwrap();
        let cfg = config(g, PenaltyKind::H1Squared);
        let level = MeshLevel::new(&g, 5, 10, BasisKind::Bilinear).unwrap().filled(0.08);
        let res = minimize_tikhonov(Problem::new(&model, &u), &level, 1e-3, &cfg).unwrap();
        assert!(res.residual < 1e-12);
        assert!(res.a_hat.values().iter().all(|&v| (v - 0.08).abs() < 1e-12));
    }

    #[test]
    fn objective_decreases_and_bounds_hold() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let cfg = config(g, PenaltyKind::H1Squared);
        let level = MeshLevel::new(&g, 10, 25, BasisKind::Bilinear).unwrap().filled(0.08);
        let res = minimize_tikhonov(Problem::new(&model, &u), &level, 1e-5, &cfg).unwrap();
        assert!(res.iterations > 1);
        for w in res.trace.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
        cfg.bounds.check(&res.a_hat).unwrap();
        let recomputed = l2_norm(&model.solve(&res.a_hat).unwrap().sub(&u).unwrap()).unwrap();
        assert!((recomputed - res.residual).abs() < 1e-10);
        assert!(res.residual < 0.2 * l2_norm(&model.solve(&Surface::constant(g, 0.08)).unwrap().sub(&u).unwrap()).unwrap());
    }

    #[test]
    fn tight_bounds_are_respected() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let mut cfg = config(g, PenaltyKind::L2Squared);
        cfg.bounds = DiffusionBounds::new(0.07, 0.09).unwrap();
        let level = MeshLevel::new(&g, 5, 25, BasisKind::BicubicSpline).unwrap().filled(0.08);
        let res = minimize_tikhonov(Problem::new(&model, &u), &level, 1e-6, &cfg).unwrap();
        cfg.bounds.check(&res.a_hat).unwrap();
        assert!(res.a_hat.min() >= 0.07 - 1e-15);
    }

    #[test]
    fn rejects_bad_beta() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let cfg = config(g, PenaltyKind::L2Squared);
        let level = MeshLevel::new(&g, 5, 10, BasisKind::Bilinear).unwrap().filled(0.08);
        assert!(minimize_tikhonov(Problem::new(&model, &u), &level, 0.0, &cfg).is_err());
    }

    #[test]
    fn over_regularized_walk_stops_immediately() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let cfg = config(g, PenaltyKind::H1Squared);
        let level = MeshLevel::new(&g, 5, 10, BasisKind::Bilinear).unwrap().filled(0.08);
        let misfit0 = l2_norm(&model.solve(&Surface::constant(g, 0.08)).unwrap().sub(&u).unwrap()).unwrap();
        let out = select_beta_morozov(Problem::new(&model, &u), &level, misfit0, &cfg).unwrap();
        assert_eq!(out.walk.len(), 1);
        assert_eq!(out.beta, cfg.beta_grid.beta_max);
        assert!(!out.result.discrepancy_unmet);
    }

    #[test]
    fn morozov_walk_is_monotone() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let mut cfg = config(g, PenaltyKind::H1Squared);
        cfg.beta_grid = BetaGrid::new(1e-2, 0.25, 6).unwrap();
        let level = MeshLevel::new(&g, 10, 25, BasisKind::Bilinear).unwrap().filled(0.08);
        let out = select_beta_morozov(Problem::new(&model, &u), &level, 1e-9, &cfg).unwrap();
        assert!(out.result.discrepancy_unmet);
        assert_eq!(out.walk.len(), 6);
        for w in out.walk.windows(2) {
            assert!(w[1].residual <= w[0].residual + 1e-8);
            assert!(w[1].penalty_value >= w[0].penalty_value - 1e-8);
        }
    }

    #[test]
    fn huge_noise_selects_coarsest_level() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let cfg = config(g, PenaltyKind::H1Squared);
        let h = MeshHierarchy::nested(vec![
            MeshLevel::new(&g, 2, 5, BasisKind::Bilinear).unwrap(),
            MeshLevel::new(&g, 4, 10, BasisKind::Bilinear).unwrap(),
        ])
        .unwrap();
        let first = project(cfg.penalty.reference(), &h.levels()[0]).unwrap();
        let r0 = minimize_tikhonov(Problem::new(&model, &u), &first, cfg.beta_grid.beta_max, &cfg).unwrap().residual;
        // the β_max residual on the coarsest level lies in [1.05, 1.5]·δ and under 1.1·δ
        let sel = select_mesh_level(Problem::new(&model, &u), &h, r0 / 1.08, 0.0, &cfg, Some(&truth)).unwrap();
        assert_eq!(sel.index, 0);
        assert!(!sel.band_unmet());
        assert_eq!(sel.diagnostics.len(), 2);
        assert!(sel.diagnostics[0].l2_error.is_some());
    }

    #[test]
    fn band_miss_is_flagged() {
        let (g, model, truth) = setup();
        let u = model.solve(&truth).unwrap();
        let mut cfg = config(g, PenaltyKind::H1Squared);
        cfg.beta_grid = BetaGrid::new(1e-3, 0.5, 2).unwrap();
        let h = MeshHierarchy::new(vec![MeshLevel::new(&g, 2, 5, BasisKind::Bilinear).unwrap()]).unwrap();
        let sel = select_mesh_level(Problem::new(&model, &u), &h, 1e-12, 0.0, &cfg, None).unwrap();
        assert!(sel.band_unmet());
    }
}
