//! Subcommand implementations. Each returns whether a discrepancy flag was raised.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use rayon::prelude::*;

use lvcal::calibrate::{select_mesh_level, BetaGrid, Problem};
use lvcal::dupire::{DiffusionBounds, DupireModel, MarketParams};
use lvcal::experiments::{
    assemble_rate_report, gap_bins, make_synthetic_data, standard_ladder, rate_point, run_gamma_sweep, run_level_curve, run_mesh_sweep,
    true_volatility, write_rates_csv, write_sweep_csv, NoiseSpec, RateConfig, RateRow, RateTruth, StudyConfig,
};
use lvcal::grid::l2_norm;
use lvcal::market::{
    estimate_eta, implied_vol, load_quotes, synthetic_chain, to_grid_surface, validate_calibration, write_validation_csv, ChainSpec,
};
use lvcal::mesh::{BasisKind, MeshHierarchy, MeshLevel};
use lvcal::penalty::PenaltyKind;
use lvcal::{Error, Grid, Result, Surface};

use crate::settings::Settings;

/// Keys shared by every command that builds a study configuration.
pub const STUDY_KEYS: &[(&str, &str)] = &[
    ("spot", "1"),
    ("rate", "0"),
    ("a_lower", "0.005"),
    ("a_upper", "1"),
    ("a0", "0.08"),
    ("tau_max", "1"),
    ("y_min", "-5"),
    ("y_max", "5"),
    ("fine_n_tau", "400"),
    ("fine_n_y", "1000"),
    ("n_tau", "50"),
    ("n_y", "100"),
    ("noise", "0.01"),
    ("penalty", "h1"),
    ("basis", "bilinear"),
    ("beta_max", "1"),
    ("beta_ratio", "0.5"),
    ("beta_count", "40"),
    ("max_iters", "400"),
    ("grad_tol", "1e-7"),
    ("obj_tol", "1e-9"),
    ("morozov_tau", "1.1"),
    ("tau1", "1.05"),
    ("tau2", "1.5"),
];

pub fn with_study_keys(extra: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
    let mut keys = STUDY_KEYS.to_vec();
    for &(k, v) in extra {
        match keys.iter_mut().find(|(key, _)| *key == k) {
            Some(slot) => slot.1 = v,
            None => keys.push((k, v)),
        }
    }
    keys
}

fn params(s: &Settings) -> Result<MarketParams> {
    MarketParams::new(s.get("spot")?, s.get("rate")?)
}

fn bounds(s: &Settings) -> Result<DiffusionBounds> {
    DiffusionBounds::new(s.get("a_lower")?, s.get("a_upper")?)
}

fn grid(s: &Settings, n_tau: &str, n_y: &str) -> Result<Grid> {
    Grid::new(0.0, s.get("tau_max")?, s.get("y_min")?, s.get("y_max")?, s.get(n_tau)?, s.get(n_y)?)
}

pub fn study(s: &Settings) -> Result<StudyConfig> {
    let cfg = StudyConfig {
        params: params(s)?,
        bounds: bounds(s)?,
        penalty: s.get("penalty")?,
        basis: s.get("basis")?,
        a0: s.get("a0")?,
        fine: grid(s, "fine_n_tau", "fine_n_y")?,
        coarse: grid(s, "n_tau", "n_y")?,
        noise_fraction: s.get("noise")?,
        beta_grid: BetaGrid::new(s.get("beta_max")?, s.get("beta_ratio")?, s.get("beta_count")?)?,
        max_iters: s.get("max_iters")?,
        grad_tol: s.get("grad_tol")?,
        obj_tol: s.get("obj_tol")?,
        morozov_tau: s.get("morozov_tau")?,
        mesh_tau1: s.get("tau1")?,
        mesh_tau2: s.get("tau2")?,
    };
    cfg.calibration(&cfg.coarse, cfg.penalty)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_surface(dir: &Path, name: &str, s: &Surface) -> Result<()> {
    let mut w = create(dir, name)?;
    s.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_surface(path: &Path) -> Result<Surface> {
    Surface::read_csv(File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?)
}

fn write_summary(dir: &Path, text: &str) -> Result<()> {
    fs::write(dir.join("summary.txt"), text)?;
    print!("{text}");
    Ok(())
}

fn pool(s: &Settings) -> Result<rayon::ThreadPool> {
    let jobs: usize = s.get("jobs")?;
    if jobs == 0 {
        return Err(Error::InvalidInput("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| Error::Numerical(e.to_string()))
}

/// `standard` for the synthetic ladder, or comma-separated `NTxNY` parameter meshes.
pub fn parse_levels(spec: &str, pde: &Grid, basis: BasisKind) -> Result<MeshHierarchy> {
    if spec.trim() == "standard" {
        return standard_ladder(pde, basis);
    }
    let levels = spec
        .split(',')
        .map(|item| {
            let (t, y) = item
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::InvalidInput(format!("level `{item}` is not of the form NTxNY")))?;
            let n = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::InvalidInput(format!("bad count in level `{item}`")));
            MeshLevel::new(pde, n(t)?, n(y)?, basis)
        })
        .collect::<Result<Vec<_>>>()?;
    MeshHierarchy::new(levels)
}

pub const SYNTH_KEYS: &[(&str, &str)] = &[("seed", "0"), ("out", ""), ("jobs", "1"), ("iv_noise", "0.002"), ("wing", "25")];

pub fn synth(s: &Settings) -> Result<bool> {
    let cfg = study(s)?;
    let seed: u64 = s.get("seed")?;
    let dir = s.out_dir()?;
    s.write_echo(&dir)?;
    let data = make_synthetic_data(&cfg.fine, &cfg.coarse, NoiseSpec::new(cfg.noise_fraction, seed)?, cfg.params)?;
    write_surface(&dir, "prices.csv", &data.u_obs)?;
    write_surface(&dir, "clean_prices.csv", &data.u_clean)?;
    write_surface(&dir, "truth.csv", &true_volatility(&cfg.coarse))?;

    let fx = lvcal::experiments::MarketFixture::default();
    let spec = ChainSpec { maturities: &fx.maturities, log_strikes: &fx.log_strikes, iv_noise: s.get("iv_noise")?, wing: s.get("wing")?, seed };
    let quotes = synthetic_chain(&cfg.model(), &true_volatility(&cfg.fine), &spec)?;
    let mut w = create(&dir, "quotes.csv")?;
    quotes.write_csv(&mut w)?;
    w.flush()?;

    write_summary(
        &dir,
        &format!(
            "grid {}x{} on [0, {}] x [{}, {}]\nnoise_std {}\ndelta {}\nquotes {}\n",
            cfg.coarse.n_tau,
            cfg.coarse.n_y,
            cfg.coarse.tau_max,
            cfg.coarse.y_min,
            cfg.coarse.y_max,
            cfg.noise_fraction * data.u_clean.max(),
            data.delta_actual,
            quotes.len()
        ),
    )?;
    Ok(false)
}

pub const CALIBRATE_KEYS: &[(&str, &str)] = &[
    ("data", ""),
    ("quotes", ""),
    ("truth", ""),
    ("eta", ""),
    ("rho", "0"),
    ("levels", "standard"),
    ("out", ""),
    ("jobs", "1"),
];

pub fn calibrate(s: &Settings) -> Result<bool> {
    let cfg = study(s)?;
    let model = DupireModel::new(cfg.params, cfg.bounds);
    let (u_obs, mask, eta) = match (s.path("data"), s.path("quotes")) {
        (Some(_), Some(_)) => return Err(Error::InvalidInput("give either --data or --quotes, not both".into())),
        (Some(path), None) => (read_surface(&path)?, None, s.required::<f64>("eta")?),
        (None, Some(path)) => {
            let q = load_quotes(&path, cfg.params)?;
            if !q.dropped.is_empty() {
                info!("{} quote rows dropped", q.dropped.len());
            }
            let gridded = to_grid_surface(&q, &cfg.coarse)?;
            let eta = match s.optional::<f64>("eta")? {
                Some(e) => e,
                None => estimate_eta(&q).ok_or_else(|| Error::InvalidInput("quotes carry no bid/ask; pass --eta".into()))?,
            };
            (gridded.u_obs, Some(gridded.mask), eta)
        }
        (None, None) => return Err(Error::InvalidInput("missing required flag --data (or --quotes)".into())),
    };
    let truth = s.path("truth").map(|p| read_surface(&p)).transpose()?;
    let g = *u_obs.grid();
    if let Some(t) = &truth {
        t.check_same_grid(&u_obs)?;
    }
    let ladder = parse_levels(s.raw("levels"), &g, cfg.basis)?;
    let calib = cfg.calibration(&g, cfg.penalty)?;
    let dir = s.out_dir()?;
    s.write_echo(&dir)?;

    let mut problem = Problem::new(&model, &u_obs);
    if let Some(m) = mask.as_deref() {
        problem = problem.with_mask(m);
    }
    let sel = select_mesh_level(problem, &ladder, eta, s.get("rho")?, &calib, truth.as_ref())?;
    write_surface(&dir, "a_hat.csv", &sel.result.a_hat)?;

    let mut w = create(&dir, "trace.csv")?;
    writeln!(w, "iter,objective,residual,step")?;
    for (k, t) in sel.result.trace.iter().enumerate() {
        writeln!(w, "{k},{},{},{}", t.objective, t.residual, t.step)?;
    }
    w.flush()?;

    let mut w = create(&dir, "levels.csv")?;
    writeln!(w, "level,n_nodes,residual,l2_error,beta")?;
    for d in &sel.diagnostics {
        writeln!(w, "{},{},{},{},{}", d.index, d.n_nodes, d.residual, d.l2_error.map(|e| e.to_string()).unwrap_or_default(), d.beta)?;
    }
    w.flush()?;

    let r = &sel.result;
    let level = &sel.diagnostics[sel.index];
    let mut text = format!(
        "eta {eta}\nselected_level {} ({}x{}, {} nodes)\nbeta {}\nresidual {}\nresidual_over_eta {}\npenalty_value {}\niterations {}\nstop {:?}\n",
        sel.index, level.n_tau_c, level.n_y_c, level.n_nodes, r.beta, r.residual, r.residual / eta, r.penalty_value, r.iterations, r.stop
    );
    if let Some(t) = &truth {
        text.push_str(&format!("l2_error {}\n", l2_norm(&r.a_hat.sub(t)?)?));
    }
    text.push_str(&format!("discrepancy_unmet {}\nband_unmet {}\n", r.discrepancy_unmet, r.band_unmet));
    write_summary(&dir, &text)?;
    Ok(r.discrepancy_unmet || r.band_unmet)
}

pub const MESHSWEEP_KEYS: &[(&str, &str)] = &[("seed", "0"), ("seeds", "5"), ("control_beta", ""), ("out", ""), ("jobs", "1")];

pub fn meshsweep(s: &Settings) -> Result<bool> {
    let cfg = study(s)?;
    let first: u64 = s.get("seed")?;
    let count: u64 = s.get("seeds")?;
    if count == 0 {
        return Err(Error::InvalidInput("--seeds must be at least 1".into()));
    }
    let ladder = standard_ladder(&cfg.coarse, cfg.basis)?;
    let dir = s.out_dir()?;
    s.write_echo(&dir)?;
    let seeds: Vec<u64> = (first..first + count).collect();
    let reports = pool(s)?.install(|| seeds.par_iter().map(|&seed| run_mesh_sweep(&cfg, &ladder, seed)).collect::<Result<Vec<_>>>())?;
    let mut w = create(&dir, "meshsweep.csv")?;
    write_sweep_csv(&reports, &mut w)?;
    w.flush()?;

    let mut text = String::from("seed delta selected best selected_error best_error ratio band_unmet\n");
    let mut ratios = Vec::new();
    for r in &reports {
        let ratio = r.selected_error() / r.best_error();
        ratios.push(ratio);
        text.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            r.seed,
            r.delta,
            r.selected,
            r.best,
            r.selected_error(),
            r.best_error(),
            ratio,
            r.band_unmet
        ));
    }
    let mean_sel = reports.iter().map(|r| r.selected_error()).sum::<f64>() / reports.len() as f64;
    let mean_best = reports.iter().map(|r| r.best_error()).sum::<f64>() / reports.len() as f64;
    text.push_str(&format!("mean_selected_error {mean_sel}\nmean_best_error {mean_best}\nmean_ratio {}\n", mean_sel / mean_best));

    if let Some(beta) = s.optional::<f64>("control_beta")? {
        let clean = make_synthetic_data(&cfg.fine, &cfg.coarse, NoiseSpec::new(0.0, first)?, cfg.params)?;
        let points = run_level_curve(&cfg, &ladder, &clean.u_obs, beta)?;
        let mut w = create(&dir, "control.csv")?;
        writeln!(w, "level,nodes,residual,l2_error")?;
        for p in &points {
            writeln!(w, "{},{},{},{}", p.level, p.nodes, p.residual, p.l2_error)?;
        }
        w.flush()?;
        text.push_str(&format!("control_levels {}\n", points.len()));
    }
    write_summary(&dir, &text)?;
    Ok(reports.iter().any(|r| r.band_unmet))
}

pub const RATES_KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("seeds", "1"),
    ("truth", "source:0.04"),
    ("delta0", "1e-3"),
    ("octaves", "6"),
    ("beta_factor", "0.1"),
    ("gamma", "false"),
    ("max_iters", "5000"),
    ("grad_tol", "0"),
    ("obj_tol", "1e-12"),
    ("out", ""),
    ("jobs", "1"),
];

fn rate_rows_csv(dir: &Path, name: &str, rows: &[RateRow]) -> Result<()> {
    let mut w = create(dir, name)?;
    write_rates_csv(rows, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn rates(s: &Settings) -> Result<bool> {
    let study = study(s)?;
    let kind: PenaltyKind = study.penalty;
    let first: u64 = s.get("seed")?;
    let count: u64 = s.get("seeds")?;
    let octaves: usize = s.get("octaves")?;
    if count == 0 || octaves < 2 {
        return Err(Error::InvalidInput("rates needs --seeds ≥ 1 and --octaves ≥ 2".into()));
    }
    let cfg = RateConfig {
        study,
        truth: s.get::<RateTruth>("truth")?,
        delta0: s.get("delta0")?,
        octaves,
        beta_factor: s.get("beta_factor")?,
        seeds: (first..first + count).collect(),
    };
    let dir = s.out_dir()?;
    s.write_echo(&dir)?;
    let truth = cfg.truth_for(kind)?;
    let jobs: Vec<(u64, f64)> = cfg.seeds.iter().flat_map(|&seed| cfg.deltas().into_iter().map(move |d| (seed, d))).collect();
    let pool = pool(s)?;
    let per_seed = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, delta)| rate_point(&cfg, kind, &truth, delta, seed).map(|r| (seed, r)))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = assemble_rate_report(kind, per_seed)?;
    rate_rows_csv(&dir, "rates.csv", &report.rows)?;

    let mut w = create(&dir, "rates_per_seed.csv")?;
    writeln!(w, "seed,delta,beta,l2_error,bregman,residual")?;
    for (seed, r) in &report.per_seed {
        writeln!(w, "{seed},{},{},{},{},{}", r.delta, r.beta, r.l2_error, r.bregman, r.residual)?;
    }
    w.flush()?;

    let (lo, hi) = report.error_slope.band();
    let (blo, bhi) = report.bregman_slope.band();
    let mut text = format!(
        "penalty {kind}\ntruth {}\nerror_slope {} (95% band {lo} .. {hi})\nbregman_slope {} (95% band {blo} .. {bhi})\nslope_ratio {}\n",
        cfg.truth,
        report.error_slope.slope,
        report.bregman_slope.slope,
        report.bregman_slope.slope / report.error_slope.slope
    );
    if s.get::<bool>("gamma")? {
        let ladder = standard_ladder(&cfg.study.coarse, cfg.study.basis)?;
        let delta = cfg.deltas()[octaves - 1];
        let rows = pool.install(|| run_gamma_sweep(&cfg, &ladder, kind, delta, first))?;
        let mut w = create(&dir, "gamma.csv")?;
        writeln!(w, "level,nodes,gamma,l2_error,clean_error")?;
        for r in &rows {
            writeln!(w, "{},{},{},{},{}", r.level, r.nodes, r.gamma, r.l2_error, r.clean_error)?;
        }
        w.flush()?;
        text.push_str(&format!("gamma_levels {} at delta {delta}\n", rows.len()));
    }
    write_summary(&dir, &text)?;
    Ok(false)
}

pub const IMPLY_KEYS: &[(&str, &str)] =
    &[("spot", "1"), ("rate", "0"), ("price", ""), ("strike", ""), ("maturity", ""), ("quotes", ""), ("out", "")];

pub fn imply(s: &Settings) -> Result<bool> {
    let p = params(s)?;
    if let Some(path) = s.path("quotes") {
        let q = load_quotes(&path, p)?;
        let dir = s.out_dir()?;
        s.write_echo(&dir)?;
        let mut w = create(&dir, "implied.csv")?;
        writeln!(w, "maturity,strike,y,mid,iv,clamped")?;
        let mut failed = 0;
        for x in q.quotes() {
            match implied_vol(x.mid, x.strike, x.maturity, &p) {
                Ok(v) => writeln!(w, "{},{},{},{},{},{}", x.maturity, x.strike, x.log_moneyness(p.spot), x.mid, v.sigma, u8::from(v.clamped))?,
                Err(e) => {
                    failed += 1;
                    info!("no implied vol at maturity {} strike {}: {e}", x.maturity, x.strike);
                    writeln!(w, "{},{},{},{},,", x.maturity, x.strike, x.log_moneyness(p.spot), x.mid)?;
                }
            }
        }
        w.flush()?;
        write_summary(&dir, &format!("quotes {}\ndropped {}\nno_solution {failed}\n", q.len(), q.dropped.len()))?;
        return Ok(false);
    }
    let v = implied_vol(s.required("price")?, s.required("strike")?, s.required("maturity")?, &p)?;
    println!("{}{}", v.sigma, if v.clamped { " (clamped)" } else { "" });
    if let Some(dir) = s.path("out") {
        fs::create_dir_all(&dir)?;
        s.write_echo(&dir)?;
        fs::write(dir.join("implied.txt"), format!("iv {}\nclamped {}\n", v.sigma, v.clamped))?;
    }
    Ok(false)
}

pub const VALIDATE_KEYS: &[(&str, &str)] = &[
    ("spot", "1"),
    ("rate", "0"),
    ("a_lower", "0.005"),
    ("a_upper", "1"),
    ("a_hat", ""),
    ("quotes", ""),
    ("bins", "0.15,0.35"),
    ("out", ""),
];

pub fn validate(s: &Settings) -> Result<bool> {
    let model = DupireModel::new(params(s)?, bounds(s)?);
    let a_hat = read_surface(&s.required::<std::path::PathBuf>("a_hat")?)?;
    let q = load_quotes(s.required::<std::path::PathBuf>("quotes")?, model.params)?;
    let mut edges = s
        .raw("bins")
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad bin edge `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    edges.push(f64::INFINITY);
    let dir = s.out_dir()?;
    s.write_echo(&dir)?;
    let rows = validate_calibration(&model, &a_hat, &q)?;
    let mut w = create(&dir, "validation.csv")?;
    write_validation_csv(&rows, &mut w)?;
    w.flush()?;
    let mut text = format!("quotes {}\ndropped {}\n|y|_upper count mean_gap\n", q.len(), q.dropped.len());
    for b in gap_bins(&rows, &edges) {
        text.push_str(&format!("{} {} {}\n", b.upper, b.count, b.mean_gap));
    }
    write_summary(&dir, &text)?;
    Ok(false)
}
