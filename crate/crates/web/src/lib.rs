//! WebAssembly bindings for the browser demo in `www/`.
//!
//! The `*_impl` functions are plain Rust so they can be tested natively.

use wasm_bindgen::prelude::*;

use lvcal::calibrate::{select_beta_morozov, Problem};
use lvcal::dupire::{DiffusionBounds, DupireModel, MarketParams};
use lvcal::experiments::{make_synthetic_data, true_sigma, true_volatility, NoiseSpec, StudyConfig};
use lvcal::grid::l2_norm;
use lvcal::market::implied_vol;
use lvcal::mesh::{BasisKind, MeshLevel};
use lvcal::{Grid, Result, Surface};

fn js(e: lvcal::Error) -> JsError {
    JsError::new(&e.to_string())
}

pub fn implied_volatility_impl(price: f64, strike: f64, maturity: f64, spot: f64, rate: f64) -> Result<f64> {
    let p = MarketParams::new(spot, rate)?;
    Ok(implied_vol(price, strike, maturity, &p)?.sigma)
}

/// Black–Scholes implied volatility of a call price.
#[wasm_bindgen]
pub fn implied_volatility(price: f64, strike: f64, maturity: f64, spot: f64, rate: f64) -> std::result::Result<f64, JsError> {
    implied_volatility_impl(price, strike, maturity, spot, rate).map_err(js)
}

/// Rows `[y, local σ, price, implied σ]` at `maturity` for the test surface
/// with its smile scaled by `amplitude` (1 = the original surface).
pub fn forward_smile_impl(maturity: f64, amplitude: f64) -> Result<Vec<f64>> {
    if !(0.0 < maturity && maturity <= 1.0) {
        return Err(lvcal::Error::InvalidInput("maturity must lie in (0, 1]".into()));
    }
    let g = Grid::new(0.0, 1.0, -5.0, 5.0, 200, 400)?;
    let sigma = |t: f64, y: f64| 0.4 + amplitude * (true_sigma(t, y) - 0.4);
    let a = Surface::from_fn(g, |t, y| 0.5 * sigma(t, y).max(0.05).powi(2));
    let model = DupireModel::new(MarketParams::default(), DiffusionBounds::default());
    let u = model.solve(&a)?;
    let mut out = Vec::new();
    for k in 0..=40 {
        let y = -1.0 + 0.05 * k as f64;
        let price = u.sample_bilinear(maturity, y);
        let iv = implied_vol(price, y.exp(), maturity, &model.params).ok().filter(|v| !v.clamped).map_or(f64::NAN, |v| v.sigma);
        out.extend([y, sigma(maturity, y).max(0.05), price, iv]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn forward_smile(maturity: f64, amplitude: f64) -> std::result::Result<Vec<f64>, JsError> {
    forward_smile_impl(maturity, amplitude).map_err(js)
}

/// Result of [`calibrate`]: surfaces are τ-major with `(n_tau + 1)·(n_y + 1)` values.
#[wasm_bindgen]
pub struct Calibration {
    n_tau: usize,
    n_y: usize,
    y_min: f64,
    y_max: f64,
    a_hat: Vec<f64>,
    truth: Vec<f64>,
    beta: f64,
    residual: f64,
    delta: f64,
    l2_error: f64,
    iterations: usize,
}

#[wasm_bindgen]
impl Calibration {
    #[wasm_bindgen(getter)]
    pub fn n_tau(&self) -> usize {
        self.n_tau
    }
    #[wasm_bindgen(getter)]
    pub fn n_y(&self) -> usize {
        self.n_y
    }
    #[wasm_bindgen(getter)]
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    #[wasm_bindgen(getter)]
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    #[wasm_bindgen(getter)]
    pub fn a_hat(&self) -> Vec<f64> {
        self.a_hat.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn truth(&self) -> Vec<f64> {
        self.truth.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn beta(&self) -> f64 {
        self.beta
    }
    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual
    }
    #[wasm_bindgen(getter)]
    pub fn delta(&self) -> f64 {
        self.delta
    }
    #[wasm_bindgen(getter)]
    pub fn l2_error(&self) -> f64 {
        self.l2_error
    }
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// Synthetic data on `[0, 1] × [−2, 2]`, then Morozov-selected Tikhonov
/// calibration on a `mesh × 2·mesh` parameter lattice.
pub fn calibrate_impl(noise: f64, seed: u32, penalty: &str, mesh: usize) -> Result<Calibration> {
    if !(1..=25).contains(&mesh) {
        return Err(lvcal::Error::InvalidInput("mesh must be between 1 and 25".into()));
    }
    let fine = Grid::new(0.0, 1.0, -2.0, 2.0, 200, 400)?;
    let coarse = Grid::new(0.0, 1.0, -2.0, 2.0, 25, 50)?;
    let cfg = StudyConfig { fine, coarse, noise_fraction: noise, penalty: penalty.parse()?, basis: BasisKind::Bilinear, ..StudyConfig::default() };
    let data = make_synthetic_data(&fine, &coarse, NoiseSpec::new(noise, u64::from(seed))?, cfg.params)?;
    let eta = if data.delta_actual > 0.0 { data.delta_actual } else { 1e-6 };
    let model = cfg.model();
    let calib = cfg.calibration(&coarse, cfg.penalty)?;
    let level = MeshLevel::new(&coarse, mesh, 2 * mesh, cfg.basis)?.filled(cfg.a0);
    let out = select_beta_morozov(Problem::new(&model, &data.u_obs), &level, eta, &calib)?;
    let truth = true_volatility(&coarse);
    let r = out.result;
    Ok(Calibration {
        n_tau: coarse.n_tau,
        n_y: coarse.n_y,
        y_min: coarse.y_min,
        y_max: coarse.y_max,
        l2_error: l2_norm(&r.a_hat.sub(&truth)?)?,
        a_hat: r.a_hat.into_values(),
        truth: truth.into_values(),
        beta: r.beta,
        residual: r.residual,
        delta: data.delta_actual,
        iterations: r.iterations,
    })
}

#[wasm_bindgen]
pub fn calibrate(noise: f64, seed: u32, penalty: &str, mesh: usize) -> std::result::Result<Calibration, JsError> {
    calibrate_impl(noise, seed, penalty, mesh).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn implied_volatility_round_trip() {
        let price = lvcal::pricing::black_scholes_call(1.0, 1.1, 0.5, 0.01, 0.3);
        assert!((implied_volatility_impl(price, 1.1, 0.5, 1.0, 0.01).unwrap() - 0.3).abs() < 1e-10);
        assert!(implied_volatility_impl(2.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn flat_smile_has_flat_implied_vol() {
        let rows = forward_smile_impl(1.0, 0.0).unwrap();
        assert_eq!(rows.len(), 41 * 4);
        for r in rows.chunks(4).filter(|r| r[0].abs() <= 0.5) {
            assert!((r[3] - 0.4).abs() < 2e-3, "{r:?}");
        }
        assert!(forward_smile_impl(0.0, 1.0).is_err());
    }

    #[test]
    fn calibration_reduces_error_and_meets_discrepancy() {
        let c = calibrate_impl(0.01, 1, "h1", 8).unwrap();
        assert_eq!(c.a_hat.len(), 26 * 51);
        let flat = Surface::constant(Grid::new(0.0, 1.0, -2.0, 2.0, 25, 50).unwrap(), 0.08);
        let truth = Surface::new(*flat.grid(), c.truth.clone()).unwrap();
        assert!(c.l2_error < l2_norm(&truth.sub(&flat).unwrap()).unwrap());
        assert!(c.residual <= 1.1 * c.delta);
        assert!(calibrate_impl(0.01, 1, "bogus", 8).is_err());
        assert!(calibrate_impl(0.01, 1, "h1", 0).is_err());
    }
}
