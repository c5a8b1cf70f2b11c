use std::fs::File;

use lvcal::calibrate::{minimize_tikhonov, select_beta_morozov, BetaGrid, Problem};
use lvcal::experiments::{make_synthetic_data, rate_point, true_volatility, NoiseSpec, RateConfig, StudyConfig};
use lvcal::grid::l2_norm;
use lvcal::market::{load_quotes, synthetic_chain, to_grid_surface, validate_calibration, ChainSpec};
use lvcal::mesh::MeshLevel;
use lvcal::penalty::PenaltyKind;
use lvcal::{Grid, Surface};

fn small_study() -> StudyConfig {
    StudyConfig {
        fine: Grid::new(0.0, 1.0, -5.0, 5.0, 100, 200).unwrap(),
        coarse: Grid::new(0.0, 1.0, -5.0, 5.0, 25, 50).unwrap(),
        ..StudyConfig::default()
    }
}

#[test]
fn morozov_calibration_improves_on_the_reference() {
    let cfg = small_study();
    let data = make_synthetic_data(&cfg.fine, &cfg.coarse, NoiseSpec::new(0.005, 11).unwrap(), cfg.params).unwrap();
    let model = cfg.model();
    let calib = cfg.calibration(&cfg.coarse, PenaltyKind::H1Squared).unwrap();
    let level = MeshLevel::new(&cfg.coarse, 10, 20, cfg.basis).unwrap().filled(cfg.a0);
    let out = select_beta_morozov(Problem::new(&model, &data.u_obs), &level, data.delta_actual, &calib).unwrap();
    let truth = true_volatility(&cfg.coarse);
    let err = l2_norm(&out.result.a_hat.sub(&truth).unwrap()).unwrap();
    let err0 = l2_norm(&Surface::constant(cfg.coarse, cfg.a0).sub(&truth).unwrap()).unwrap();
    assert!(!out.result.discrepancy_unmet);
    assert!(out.result.residual <= 1.1 * data.delta_actual);
    assert!(err < err0, "error {err} vs reference {err0}");
}

#[test]
fn larger_beta_trades_residual_for_penalty() {
    let cfg = small_study();
    let data = make_synthetic_data(&cfg.fine, &cfg.coarse, NoiseSpec::new(0.01, 2).unwrap(), cfg.params).unwrap();
    let model = cfg.model();
    let mut calib = cfg.calibration(&cfg.coarse, PenaltyKind::L2Squared).unwrap();
    calib.max_iters = 3000;
    calib.grad_tol = 0.0;
    calib.obj_tol = 1e-13;
    let mut start = MeshLevel::new(&cfg.coarse, 8, 8, cfg.basis).unwrap().filled(cfg.a0);
    let mut prev: Option<(f64, f64)> = None;
    for beta in BetaGrid::new(1.0, 0.25, 6).unwrap().values() {
        let r = minimize_tikhonov(Problem::new(&model, &data.u_obs), &start, beta, &calib).unwrap();
        if let Some((res, pen)) = prev {
            assert!(r.residual <= res + 1e-8, "residual rose at β = {beta}");
            assert!(r.penalty_value >= pen - 1e-8, "penalty fell at β = {beta}");
        }
        prev = Some((r.residual, r.penalty_value));
        start = r.level;
    }
}

#[test]
fn error_shrinks_as_noise_halves() {
    let mut cfg = RateConfig { octaves: 4, ..RateConfig::default() };
    cfg.study.coarse = Grid::new(0.0, 1.0, -5.0, 5.0, 25, 50).unwrap();
    let truth = cfg.truth_for(PenaltyKind::H1Squared).unwrap();
    let errors: Vec<f64> = cfg.deltas().iter().map(|&d| rate_point(&cfg, PenaltyKind::H1Squared, &truth, d, 4).unwrap().l2_error).collect();
    let inversions: Vec<f64> = errors.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    assert!(inversions.len() <= 1 && inversions.iter().all(|&r| r <= 0.1), "{errors:?}");
    assert!(errors[3] < errors[0]);
}

#[test]
fn surface_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.csv");
    let g = Grid::new(0.0, 1.0, -5.0, 5.0, 50, 100).unwrap();
    let a = true_volatility(&g);
    a.write_csv(File::create(&path).unwrap()).unwrap();
    let back = Surface::read_csv(File::open(&path).unwrap()).unwrap();
    assert_eq!(back.grid(), a.grid());
    assert_eq!(back.values(), a.values());
}

#[test]
fn quotes_from_file_calibrate_and_validate() {
    let cfg = small_study();
    let model = cfg.model();
    let (maturities, log_strikes) = ([0.25, 0.5, 1.0], [-0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3]);
    let spec = ChainSpec { maturities: &maturities, log_strikes: &log_strikes, iv_noise: 0.002, wing: 10.0, seed: 5 };
    let chain = synthetic_chain(&model, &true_volatility(&cfg.fine), &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quotes.csv");
    chain.write_csv(File::create(&path).unwrap()).unwrap();
    let quotes = load_quotes(&path, cfg.params).unwrap();
    assert_eq!(quotes.len(), 21);
    assert!(quotes.dropped.is_empty());

    let gridded = to_grid_surface(&quotes, &cfg.coarse).unwrap();
    let inside = gridded.mask.iter().filter(|&&m| m == 1.0).count();
    assert!(inside > 0 && inside < cfg.coarse.node_count());
    let eta = lvcal::market::estimate_eta(&quotes).unwrap();
    let calib = cfg.calibration(&cfg.coarse, PenaltyKind::H1Squared).unwrap();
    let level = MeshLevel::new(&cfg.coarse, 5, 10, cfg.basis).unwrap().filled(cfg.a0);
    let out = select_beta_morozov(Problem::new(&model, &gridded.u_obs).with_mask(&gridded.mask), &level, eta, &calib).unwrap();
    let rows = validate_calibration(&model, &out.result.a_hat, &quotes).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(rows.windows(2).all(|w| (w[0].maturity, w[0].strike) <= (w[1].maturity, w[1].strike)));
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap()).collect();
    assert!(gaps.len() >= 18);
    // coarse test grid: loose pointwise bound, tighter on average
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!(mean < 0.03 && gaps.iter().all(|&g| g < 0.1), "{gaps:?}");
}
