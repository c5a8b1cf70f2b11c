//! Synthetic studies: ground truth, seeded noise, the mesh-discrepancy sweep,
//! convergence rates in δ and the discretization floor γ_n.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adjoint::adjoint_derivative;
use crate::calibrate::{minimize_tikhonov, select_beta_morozov, select_mesh_level, BetaGrid, CalibrationConfig, Problem};
use crate::dupire::{DiffusionBounds, DupireModel, MarketParams};
use crate::error::{invalid, Error, Result};
use crate::grid::{l2_norm, Grid, Surface};
use crate::market::{estimate_eta, synthetic_chain, to_grid_surface, validate_calibration, ChainSpec, QuoteSet, ValidationRow};
use crate::mesh::{project, restrict_measure_gamma, BasisKind, MeshHierarchy, MeshLevel};
use crate::penalty::{Penalty, PenaltyKind};

/// Step sizes of the synthetic mesh ladder, as fractions of the domain extent.
pub const LADDER_STEPS: [f64; 12] = [0.1, 0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01, 0.0075, 0.005, 0.0025];

/// Local volatility of the synthetic study as a diffusion `a = σ²/2`.
pub fn true_sigma(tau: f64, y: f64) -> f64 {
    if y.abs() <= 0.4 {
        0.4 - 0.16 * (-tau / 2.0).exp() * (4.0 * PI * y / 5.0).cos()
    } else {
        0.4
    }
}

pub fn true_volatility(g: &Grid) -> Surface {
    Surface::from_fn(*g, |t, y| 0.5 * true_sigma(t, y).powi(2))
}

/// Price-space source element `w(τ, y) = −τ·exp(−y²/0.1)`.
pub fn default_source(g: &Grid) -> Surface {
    Surface::from_fn(*g, |t, y| -t * (-y * y / 0.1).exp())
}

/// Fixed point of `a = (∇f)⁻¹(F'(a)* w)`, or `None` if the iteration leaves
/// the admissible set or fails to settle.
fn source_fixed_point(model: &DupireModel, penalty: &Penalty, w: &Surface) -> Result<Option<Surface>> {
    let a0 = penalty.reference();
    let tol = 1e-14 * l2_norm(a0)?;
    let mut a = a0.clone();
    for _ in 0..200 {
        let next = penalty.inverse_gradient(&adjoint_derivative(model, &a, w)?)?;
        if model.bounds.check(&next).is_err() {
            return Ok(None);
        }
        let change = l2_norm(&next.sub(&a)?)?;
        a = next;
        if change <= tol {
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// A truth `a†` satisfying the source condition `∇f(a†) = F'(a†)* (s·w)`
/// exactly on the penalty's grid. The scale `s` is chosen by bisection so
/// that `max |a† − a0| = amplitude`.
pub fn source_condition_truth(model: &DupireModel, penalty: &Penalty, w: &Surface, amplitude: f64) -> Result<Surface> {
    if !(amplitude > 0.0) {
        return invalid("amplitude must be positive");
    }
    let a0 = penalty.reference().clone();
    let deviation = |a: &Surface| a.values().iter().zip(a0.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = None;
    let mut grow = true;
    for _ in 0..200 {
        let mid = if grow { hi } else { 0.5 * (lo + hi) };
        let fp = source_fixed_point(model, penalty, &w.scale(mid))?;
        match fp {
            Some(a) if deviation(&a) < amplitude => {
                lo = mid;
                if grow {
                    hi *= 2.0;
                }
                best = Some(a);
            }
            other => {
                grow = false;
                hi = mid;
                if other.is_some() {
                    best = other;
                }
            }
        }
        if grow && hi > 1e30 {
            return invalid("source element has no effect on the truth");
        }
        if !grow && hi - lo <= 1e-12 * hi {
            break;
        }
    }
    match best {
        Some(a) if (deviation(&a) - amplitude).abs() <= 1e-6 * amplitude => Ok(a),
        _ => Err(Error::Numerical(format!("no admissible source-condition truth with amplitude {amplitude}"))),
    }
}

/// Default data grids: Δτ = 0.0025, Δy = 0.01 for generation and Δτ = 0.02, Δy = 0.1 for inversion.
pub fn default_grids() -> (Grid, Grid) {
    let fine = Grid::new(0.0, 1.0, -5.0, 5.0, 400, 1000).expect("valid grid");
    let coarse = Grid::new(0.0, 1.0, -5.0, 5.0, 50, 100).expect("valid grid");
    (fine, coarse)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation as a fraction of the largest clean price.
    pub level_fraction: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level_fraction: f64, seed: u64) -> Result<Self> {
        if !(level_fraction >= 0.0 && level_fraction.is_finite()) {
            return invalid(format!("noise level must be nonnegative, got {level_fraction}"));
        }
        Ok(Self { level_fraction, seed })
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { level_fraction: 0.01, seed: 0 }
    }
}

/// `n` iid Gaussian samples with standard deviation `std`, fixed by `seed`.
pub fn gaussian_noise(n: usize, std: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| std * normal.sample(&mut rng)).collect()
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub u_obs: Surface,
    pub u_clean: Surface,
    pub delta_actual: f64,
}

/// Prices from the true surface on `fine`, perturbed there and injected onto `coarse`.
pub fn make_synthetic_data(fine: &Grid, coarse: &Grid, noise: NoiseSpec, p: MarketParams) -> Result<SyntheticData> {
    if fine.injection_strides(coarse).is_none() {
        return invalid("coarse grid nodes are not a subset of the fine grid");
    }
    let model = DupireModel::new(p, DiffusionBounds::default());
    let clean = model.solve(&true_volatility(fine))?;
    let std = noise.level_fraction * clean.max();
    let e = Surface::new(*fine, gaussian_noise(fine.node_count(), std, noise.seed))?;
    let e_coarse = e.restrict_to(coarse)?;
    let u_clean = clean.restrict_to(coarse)?;
    Ok(SyntheticData { u_obs: u_clean.add(&e_coarse)?, delta_actual: l2_norm(&e_coarse)?, u_clean })
}

/// Parameter meshes for [`LADDER_STEPS`]: `round(1/Δ)` intervals per direction,
/// capped at the PDE grid, duplicates removed. The result is not nested.
pub fn standard_ladder(pde: &Grid, basis: BasisKind) -> Result<MeshHierarchy> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for d in LADDER_STEPS {
        let n = (1.0 / d).round() as usize;
        let c = (n.min(pde.n_tau), n.min(pde.n_y));
        if counts.last() != Some(&c) {
            counts.push(c);
        }
    }
    let levels = counts.into_iter().map(|(t, y)| MeshLevel::new(pde, t, y, basis)).collect::<Result<Vec<_>>>()?;
    MeshHierarchy::new(levels)
}

/// Least-squares fit of `log y = slope·log x + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for two points.
    pub std_error: f64,
}

impl SlopeFit {
    /// 95% band using the normal quantile.
    pub fn band(&self) -> (f64, f64) {
        (self.slope - 1.96 * self.std_error, self.slope + 1.96 * self.std_error)
    }
}

pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() || x.len() < 2 {
        return invalid("slope fit needs two or more paired points");
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0 && v.is_finite())) {
        return invalid("log-log fit needs positive finite values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("slope fit needs distinct x values");
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = if lx.len() > 2 {
        let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeFit { slope, intercept, std_error })
}

/// Settings shared by the synthetic studies.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub params: MarketParams,
    pub bounds: DiffusionBounds,
    pub penalty: PenaltyKind,
    pub basis: BasisKind,
    pub a0: f64,
    pub fine: Grid,
    pub coarse: Grid,
    pub noise_fraction: f64,
    pub beta_grid: BetaGrid,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub obj_tol: f64,
    pub morozov_tau: f64,
    pub mesh_tau1: f64,
    pub mesh_tau2: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let (fine, coarse) = default_grids();
        let base = CalibrationConfig::new(
            Penalty::new(PenaltyKind::H1Squared, Surface::constant(coarse, 0.08)).expect("valid penalty"),
            DiffusionBounds::default(),
        );
        Self {
            params: MarketParams::default(),
            bounds: DiffusionBounds::default(),
            penalty: PenaltyKind::H1Squared,
            basis: BasisKind::Bilinear,
            a0: 0.08,
            fine,
            coarse,
            noise_fraction: 0.01,
            beta_grid: base.beta_grid,
            max_iters: base.max_iters,
            grad_tol: base.grad_tol,
            obj_tol: base.obj_tol,
            morozov_tau: base.morozov_tau,
            mesh_tau1: base.mesh_tau1,
            mesh_tau2: base.mesh_tau2,
        }
    }
}

impl StudyConfig {
    pub fn model(&self) -> DupireModel {
        DupireModel::new(self.params, self.bounds)
    }

    /// Calibration settings on `grid` with the constant reference `a0`.
    pub fn calibration(&self, grid: &Grid, kind: PenaltyKind) -> Result<CalibrationConfig> {
        let penalty = Penalty::within_bounds(kind, Surface::constant(*grid, self.a0), &self.bounds)?;
        let mut cfg = CalibrationConfig::new(penalty, self.bounds);
        cfg.beta_grid = self.beta_grid;
        cfg.max_iters = self.max_iters;
        cfg.grad_tol = self.grad_tol;
        cfg.obj_tol = self.obj_tol;
        cfg.morozov_tau = self.morozov_tau;
        cfg.mesh_tau1 = self.mesh_tau1;
        cfg.mesh_tau2 = self.mesh_tau2;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub level: usize,
    pub n_tau_c: usize,
    pub n_y_c: usize,
    pub nodes: usize,
    pub beta: f64,
    pub residual: f64,
    pub l2_error: f64,
    pub in_band: bool,
    pub selected: bool,
}

/// One seed of the mesh-discrepancy study.
#[derive(Clone, Debug)]
pub struct MeshSweepReport {
    pub seed: u64,
    pub delta: f64,
    pub rows: Vec<SweepRow>,
    pub selected: usize,
    pub best: usize,
    pub band_unmet: bool,
}

impl MeshSweepReport {
    pub fn selected_error(&self) -> f64 {
        self.rows[self.selected].l2_error
    }

    pub fn best_error(&self) -> f64 {
        self.rows[self.best].l2_error
    }
}

fn argmin(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, x) in v.enumerate() {
        if x < best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Calibrates every ladder level on noisy synthetic data (seed `seed`) and
/// applies the mesh-level discrepancy rule with `δ = delta_actual`, `ρ_m = 0`.
pub fn run_mesh_sweep(cfg: &StudyConfig, ladder: &MeshHierarchy, seed: u64) -> Result<MeshSweepReport> {
    let data = make_synthetic_data(&cfg.fine, &cfg.coarse, NoiseSpec::new(cfg.noise_fraction, seed)?, cfg.params)?;
    if !(data.delta_actual > 0.0) {
        return invalid("mesh sweep needs a positive noise level; use run_level_curve for clean data");
    }
    let model = cfg.model();
    let calib = cfg.calibration(&cfg.coarse, cfg.penalty)?;
    let truth = true_volatility(&cfg.coarse);
    let sel = select_mesh_level(Problem::new(&model, &data.u_obs), ladder, data.delta_actual, 0.0, &calib, Some(&truth))?;
    let rows: Vec<SweepRow> = sel
        .diagnostics
        .iter()
        .map(|d| SweepRow {
            seed,
            level: d.index,
            n_tau_c: d.n_tau_c,
            n_y_c: d.n_y_c,
            nodes: d.n_nodes,
            beta: d.beta,
            residual: d.residual,
            l2_error: d.l2_error.expect("truth supplied"),
            in_band: d.in_band,
            selected: d.index == sel.index,
        })
        .collect();
    let best = argmin(rows.iter().map(|r| r.l2_error));
    Ok(MeshSweepReport { seed, delta: data.delta_actual, rows, selected: sel.index, best, band_unmet: sel.band_unmet() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LevelPoint {
    pub level: usize,
    pub nodes: usize,
    pub residual: f64,
    pub l2_error: f64,
}

/// Fixed-β calibration on every level against `u_obs`, each level warm-started
/// from the previous one. Used for the noise-free control.
pub fn run_level_curve(cfg: &StudyConfig, ladder: &MeshHierarchy, u_obs: &Surface, beta: f64) -> Result<Vec<LevelPoint>> {
    let model = cfg.model();
    let grid = *u_obs.grid();
    let calib = cfg.calibration(&grid, cfg.penalty)?;
    let truth = true_volatility(&grid);
    let mut out = Vec::with_capacity(ladder.len());
    let mut prev = calib.penalty.reference().clone();
    for (level, template) in ladder.levels().iter().enumerate() {
        let start = project(&prev, template)?;
        let res = minimize_tikhonov(Problem::new(&model, u_obs), &start, beta, &calib)?;
        out.push(LevelPoint { level, nodes: template.node_count(), residual: res.residual, l2_error: l2_norm(&res.a_hat.sub(&truth)?)? });
        prev = res.a_hat;
    }
    Ok(out)
}

/// Ground truth of the rate study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateTruth {
    /// The synthetic surface of [`true_volatility`].
    Benchmark,
    /// [`source_condition_truth`] for the penalty under study, with [`default_source`].
    SourceCondition { amplitude: f64 },
}

impl FromStr for RateTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benchmark" => Ok(RateTruth::Benchmark),
            "source" => Ok(RateTruth::SourceCondition { amplitude: 0.04 }),
            other => match other.strip_prefix("source:").map(str::parse::<f64>) {
                Some(Ok(amplitude)) if amplitude > 0.0 => Ok(RateTruth::SourceCondition { amplitude }),
                _ => invalid(format!("unknown truth '{s}' (expected benchmark, source or source:<amplitude>)")),
            },
        }
    }
}

impl fmt::Display for RateTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateTruth::Benchmark => f.write_str("benchmark"),
            RateTruth::SourceCondition { amplitude } => write!(f, "source:{amplitude}"),
        }
    }
}

/// Settings of the δ-rate study. Data are generated on the inversion grid
/// itself (`ρ_m = 0`) and the parameter lives on that grid (`γ_n = 0`), so the
/// error isolates the δ dependence.
#[derive(Clone, Debug)]
pub struct RateConfig {
    pub study: StudyConfig,
    pub truth: RateTruth,
    pub delta0: f64,
    pub octaves: usize,
    /// `β = beta_factor·δ`.
    pub beta_factor: f64,
    pub seeds: Vec<u64>,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            study: StudyConfig::default(),
            truth: RateTruth::SourceCondition { amplitude: 0.04 },
            delta0: 1e-3,
            octaves: 6,
            beta_factor: 0.1,
            seeds: vec![0],
        }
        .converged()
    }
}

impl RateConfig {
    /// Tight stopping rules: rates concern the minimizer, not an early-stopped iterate.
    pub fn converged(mut self) -> Self {
        self.study.max_iters = 5000;
        self.study.grad_tol = 0.0;
        self.study.obj_tol = 1e-12;
        self
    }

    pub fn truth_for(&self, kind: PenaltyKind) -> Result<Surface> {
        let g = self.study.coarse;
        match self.truth {
            RateTruth::Benchmark => Ok(true_volatility(&g)),
            RateTruth::SourceCondition { amplitude } => {
                let penalty = Penalty::new(kind, Surface::constant(g, self.study.a0))?;
                source_condition_truth(&self.study.model(), &penalty, &default_source(&g), amplitude)
            }
        }
    }

    pub fn deltas(&self) -> Vec<f64> {
        (0..self.octaves).map(|k| self.delta0 * 0.5f64.powi(k as i32)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRow {
    pub delta: f64,
    pub beta: f64,
    pub l2_error: f64,
    pub bregman: f64,
    pub residual: f64,
}

/// One calibration of the rate study: data `F(a†) + δ·ξ/‖ξ‖` with ξ from `seed`.
pub fn rate_point(cfg: &RateConfig, kind: PenaltyKind, truth: &Surface, delta: f64, seed: u64) -> Result<RateRow> {
    if !(delta > 0.0) {
        return invalid("rate study needs a positive noise level");
    }
    let g = cfg.study.coarse;
    truth.check_same_grid(&Surface::zeros(g))?;
    let model = cfg.study.model();
    let clean = model.solve(truth)?;
    let xi = Surface::new(g, gaussian_noise(g.node_count(), 1.0, seed))?;
    let u_obs = clean.add(&xi.scale(delta / l2_norm(&xi)?))?;
    let calib = cfg.study.calibration(&g, kind)?;
    let start = MeshLevel::new(&g, g.n_tau, g.n_y, cfg.study.basis)?.filled(cfg.study.a0);
    let beta = cfg.beta_factor * delta;
    let res = minimize_tikhonov(Problem::new(&model, &u_obs), &start, beta, &calib)?;
    Ok(RateRow {
        delta,
        beta,
        l2_error: l2_norm(&res.a_hat.sub(truth)?)?,
        bregman: calib.penalty.bregman_distance(&res.a_hat, truth)?,
        residual: res.residual,
    })
}

#[derive(Clone, Debug)]
pub struct RateReport {
    pub penalty: PenaltyKind,
    /// Seed-averaged rows, one per δ.
    pub rows: Vec<RateRow>,
    pub per_seed: Vec<(u64, RateRow)>,
    pub error_slope: SlopeFit,
    pub bregman_slope: SlopeFit,
}

/// Averages per-seed rows by δ (in first-seen order) and fits both slopes.
pub fn assemble_rate_report(kind: PenaltyKind, per_seed: Vec<(u64, RateRow)>) -> Result<RateReport> {
    let mut deltas: Vec<f64> = Vec::new();
    for (_, r) in &per_seed {
        if !deltas.contains(&r.delta) {
            deltas.push(r.delta);
        }
    }
    let rows: Vec<RateRow> = deltas
        .iter()
        .map(|&d| {
            let group: Vec<&RateRow> = per_seed.iter().map(|(_, r)| r).filter(|r| r.delta == d).collect();
            let n = group.len() as f64;
            let mean = |f: fn(&RateRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            RateRow { delta: d, beta: group[0].beta, l2_error: mean(|r| r.l2_error), bregman: mean(|r| r.bregman), residual: mean(|r| r.residual) }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let error_slope = fit_loglog(&x, &rows.iter().map(|r| r.l2_error).collect::<Vec<_>>())?;
    let bregman_slope = fit_loglog(&x, &rows.iter().map(|r| r.bregman.max(f64::MIN_POSITIVE)).collect::<Vec<_>>())?;
    Ok(RateReport { penalty: kind, rows, per_seed, error_slope, bregman_slope })
}

pub fn run_rate_study(cfg: &RateConfig, kind: PenaltyKind) -> Result<RateReport> {
    let truth = cfg.truth_for(kind)?;
    let mut per_seed = Vec::new();
    for &seed in &cfg.seeds {
        for delta in cfg.deltas() {
            per_seed.push((seed, rate_point(cfg, kind, &truth, delta, seed)?));
        }
    }
    assemble_rate_report(kind, per_seed)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaRow {
    pub level: usize,
    pub nodes: usize,
    pub gamma: f64,
    pub l2_error: f64,
    pub clean_error: f64,
}

/// Fixed small δ, every ladder level: the projection error γ_n of the truth,
/// the calibration error and the noise-free calibration error at that level.
pub fn run_gamma_sweep(cfg: &RateConfig, ladder: &MeshHierarchy, kind: PenaltyKind, delta: f64, seed: u64) -> Result<Vec<GammaRow>> {
    let g = cfg.study.coarse;
    let model = cfg.study.model();
    let truth = true_volatility(&g);
    let clean = model.solve(&truth)?;
    let xi = Surface::new(g, gaussian_noise(g.node_count(), 1.0, seed))?;
    let noisy = clean.add(&xi.scale(delta / l2_norm(&xi)?))?;
    let calib = cfg.study.calibration(&g, kind)?;
    let beta = cfg.beta_factor * delta;
    let mut rows = Vec::with_capacity(ladder.len());
    for (level, template) in ladder.levels().iter().enumerate() {
        let start = template.clone().filled(cfg.study.a0);
        let err = |u: &Surface| -> Result<f64> {
            let res = minimize_tikhonov(Problem::new(&model, u), &start, beta, &calib)?;
            l2_norm(&res.a_hat.sub(&truth)?)
        };
        rows.push(GammaRow {
            level,
            nodes: template.node_count(),
            gamma: restrict_measure_gamma(&truth, template)?,
            l2_error: err(&noisy)?,
            clean_error: err(&clean)?,
        });
    }
    Ok(rows)
}

/// `‖F(a) − F_m(a)‖` with `F_m` solved on `coarse` and compared at its nodes
/// against a solve on `fine`.
pub fn measure_rho(model: &DupireModel, a_fine: &Surface, coarse: &Grid) -> Result<f64> {
    let u_fine = model.solve(a_fine)?.restrict_to(coarse)?;
    let u_coarse = model.solve(&a_fine.restrict_to(coarse)?)?;
    l2_norm(&u_coarse.sub(&u_fine)?)
}

pub fn write_sweep_csv<W: Write>(reports: &[MeshSweepReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["seed", "level", "n_tau", "n_y", "nodes", "beta", "residual", "l2_error", "in_band", "selected"])?;
    for r in reports.iter().flat_map(|rep| &rep.rows) {
        out.write_record([
            r.seed.to_string(),
            r.level.to_string(),
            r.n_tau_c.to_string(),
            r.n_y_c.to_string(),
            r.nodes.to_string(),
            r.beta.to_string(),
            r.residual.to_string(),
            r.l2_error.to_string(),
            u8::from(r.in_band).to_string(),
            u8::from(r.selected).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_rates_csv<W: Write>(rows: &[RateRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["delta", "beta", "l2_error", "bregman", "residual"])?;
    for r in rows {
        out.write_record([r.delta, r.beta, r.l2_error, r.bregman, r.residual].map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Synthetic option chain whose implied-vol noise grows away from the money.
#[derive(Clone, Debug)]
pub struct MarketFixture {
    pub maturities: Vec<f64>,
    pub log_strikes: Vec<f64>,
    pub iv_noise: f64,
    pub wing: f64,
    /// Parameter mesh used for the calibration.
    pub mesh: (usize, usize),
    /// Upper edges of the `|y|` bins used to summarize gaps.
    pub bin_edges: Vec<f64>,
}

impl Default for MarketFixture {
    fn default() -> Self {
        Self {
            maturities: vec![0.25, 0.5, 0.75, 1.0],
            log_strikes: (0..11).map(|k| -0.5 + 0.1 * k as f64).collect(),
            iv_noise: 0.002,
            wing: 25.0,
            mesh: (10, 20),
            bin_edges: vec![0.15, 0.35, f64::INFINITY],
        }
    }
}

#[derive(Clone, Debug)]
pub struct GapBin {
    pub upper: f64,
    pub count: usize,
    pub mean_gap: f64,
}

#[derive(Clone, Debug)]
pub struct MarketFixtureReport {
    pub quotes: QuoteSet,
    pub eta: f64,
    pub beta: f64,
    pub residual: f64,
    pub a_hat: Surface,
    pub rows: Vec<ValidationRow>,
    pub bins: Vec<GapBin>,
}

impl MarketFixtureReport {
    /// Index of the `|y|` bin with the smallest mean gap.
    pub fn smallest_bin(&self) -> usize {
        argmin(self.bins.iter().map(|b| if b.count > 0 { b.mean_gap } else { f64::INFINITY }))
    }
}

/// Mean implied-vol gap per `|y|` bin; rows without both vols are skipped.
pub fn gap_bins(rows: &[ValidationRow], edges: &[f64]) -> Vec<GapBin> {
    let mut bins: Vec<GapBin> = edges.iter().map(|&upper| GapBin { upper, count: 0, mean_gap: 0.0 }).collect();
    for r in rows {
        let (Some(gap), Some(k)) = (r.gap(), edges.iter().position(|&e| r.y.abs() < e)) else { continue };
        bins[k].count += 1;
        bins[k].mean_gap += gap;
    }
    for b in &mut bins {
        if b.count > 0 {
            b.mean_gap /= b.count as f64;
        }
    }
    bins
}

/// Generates a chain from the synthetic truth on the fine grid, grids it on
/// the coarse grid, calibrates by Morozov with η from the spreads and
/// compares implied volatilities.
pub fn run_market_fixture(cfg: &StudyConfig, fx: &MarketFixture, seed: u64) -> Result<MarketFixtureReport> {
    let model = cfg.model();
    let spec = ChainSpec { maturities: &fx.maturities, log_strikes: &fx.log_strikes, iv_noise: fx.iv_noise, wing: fx.wing, seed };
    let quotes = synthetic_chain(&model, &true_volatility(&cfg.fine), &spec)?;
    let gridded = to_grid_surface(&quotes, &cfg.coarse)?;
    let eta = estimate_eta(&quotes).ok_or_else(|| Error::InsufficientData("quotes carry no spreads".into()))?;
    let calib = cfg.calibration(&cfg.coarse, cfg.penalty)?;
    let level = MeshLevel::new(&cfg.coarse, fx.mesh.0, fx.mesh.1, cfg.basis)?.filled(cfg.a0);
    let problem = Problem::new(&model, &gridded.u_obs).with_mask(&gridded.mask);
    let out = select_beta_morozov(problem, &level, eta, &calib)?;
    let a_hat = out.result.a_hat.clone();
    let rows = validate_calibration(&model, &a_hat, &quotes)?;
    let bins = gap_bins(&rows, &fx.bin_edges);
    Ok(MarketFixtureReport { quotes, eta, beta: out.beta, residual: out.result.residual, a_hat, rows, bins })
}
