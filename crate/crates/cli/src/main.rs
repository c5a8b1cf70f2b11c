mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lvcal::Error;

use commands::*;
use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "lvcal", version, about = "Local volatility calibration by Tikhonov regularization of Dupire's equation")]
struct Cli {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic prices, truth and a quote chain from the test surface.
    Synth(SynthArgs),
    /// Calibrate a diffusion surface from gridded prices or quotes.
    Calibrate(CalibrateArgs),
    /// Mesh-level discrepancy study over several noise seeds.
    Meshsweep(MeshsweepArgs),
    /// Convergence rate of the calibration error in the noise level.
    Rates(RatesArgs),
    /// Black–Scholes implied volatility of one price or a quote file.
    Imply(ImplyArgs),
    /// Compare market and model implied volatilities for a calibrated surface.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Default)]
struct StudyArgs {
    #[arg(long)]
    spot: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    a_lower: Option<f64>,
    #[arg(long)]
    a_upper: Option<f64>,
    /// Constant reference surface and initial guess.
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    tau_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_max: Option<f64>,
    #[arg(long)]
    fine_n_tau: Option<usize>,
    #[arg(long)]
    fine_n_y: Option<usize>,
    /// Inversion grid intervals in τ.
    #[arg(long)]
    n_tau: Option<usize>,
    /// Inversion grid intervals in y.
    #[arg(long)]
    n_y: Option<usize>,
    /// Noise standard deviation as a fraction of the largest price.
    #[arg(long)]
    noise: Option<f64>,
    /// l2, h1, kl or modes:<n>.
    #[arg(long)]
    penalty: Option<String>,
    /// bilinear or spline.
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    beta_max: Option<f64>,
    #[arg(long)]
    beta_ratio: Option<f64>,
    #[arg(long)]
    beta_count: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    #[arg(long)]
    obj_tol: Option<f64>,
    #[arg(long)]
    morozov_tau: Option<f64>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

impl StudyArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("spot", s(&self.spot)),
            ("rate", s(&self.rate)),
            ("a_lower", s(&self.a_lower)),
            ("a_upper", s(&self.a_upper)),
            ("a0", s(&self.a0)),
            ("tau_max", s(&self.tau_max)),
            ("y_min", s(&self.y_min)),
            ("y_max", s(&self.y_max)),
            ("fine_n_tau", s(&self.fine_n_tau)),
            ("fine_n_y", s(&self.fine_n_y)),
            ("n_tau", s(&self.n_tau)),
            ("n_y", s(&self.n_y)),
            ("noise", s(&self.noise)),
            ("penalty", s(&self.penalty)),
            ("basis", s(&self.basis)),
            ("beta_max", s(&self.beta_max)),
            ("beta_ratio", s(&self.beta_ratio)),
            ("beta_count", s(&self.beta_count)),
            ("max_iters", s(&self.max_iters)),
            ("grad_tol", s(&self.grad_tol)),
            ("obj_tol", s(&self.obj_tol)),
            ("morozov_tau", s(&self.morozov_tau)),
            ("tau1", s(&self.tau1)),
            ("tau2", s(&self.tau2)),
        ]
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent sweep points.
    #[arg(long)]
    jobs: Option<usize>,
}

impl RunArgs {
    fn flags(&self) -> Vec<(&'static str, Option<String>)> {
        vec![("out", self.out.as_ref().map(|p| p.display().to_string())), ("jobs", s(&self.jobs))]
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Implied-vol noise at the money for the quote chain.
    #[arg(long)]
    iv_noise: Option<f64>,
    /// Growth of the quote noise with y².
    #[arg(long)]
    wing: Option<f64>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Gridded prices (`tau,y,value`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Quote file (`maturity,strike,mid,bid,ask,volume`), gridded onto the inversion grid.
    #[arg(long)]
    quotes: Option<PathBuf>,
    /// Known diffusion surface for error reporting.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Noise bound; estimated from spreads with --quotes when omitted.
    #[arg(long)]
    eta: Option<f64>,
    /// Range-discretization bound ρ_m.
    #[arg(long)]
    rho: Option<f64>,
    /// `standard` or comma-separated `NTxNY` meshes, coarse to fine.
    #[arg(long)]
    levels: Option<String>,
}

#[derive(Args, Debug)]
struct MeshsweepArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    run: RunArgs,
    /// First noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    seeds: Option<u64>,
    /// Also run the noise-free level curve at this β.
    #[arg(long)]
    control_beta: Option<f64>,
}

#[derive(Args, Debug)]
struct RatesArgs {
    #[command(flatten)]
    study: StudyArgs,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seeds: Option<u64>,
    /// benchmark, source or source:<amplitude>.
    #[arg(long)]
    truth: Option<String>,
    /// Largest noise level; each octave halves it.
    #[arg(long)]
    delta0: Option<f64>,
    #[arg(long)]
    octaves: Option<usize>,
    /// β = beta_factor·δ.
    #[arg(long)]
    beta_factor: Option<f64>,
    /// Also sweep the parameter mesh at the smallest δ.
    #[arg(long)]
    gamma: bool,
}

#[derive(Args, Debug)]
struct ImplyArgs {
    #[arg(long)]
    spot: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    price: Option<f64>,
    #[arg(long)]
    strike: Option<f64>,
    #[arg(long)]
    maturity: Option<f64>,
    #[arg(long)]
    quotes: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long)]
    spot: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    a_lower: Option<f64>,
    #[arg(long)]
    a_upper: Option<f64>,
    /// Calibrated surface (`tau,y,value`).
    #[arg(long)]
    a_hat: Option<PathBuf>,
    #[arg(long)]
    quotes: Option<PathBuf>,
    /// Comma-separated |y| bin edges for the gap summary.
    #[arg(long)]
    bins: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

type Runner = fn(&Settings) -> lvcal::Result<bool>;

fn build(cmd: &Command) -> (Settings, Vec<(&'static str, Option<String>)>, Runner) {
    match cmd {
        Command::Synth(a) => {
            let mut f = a.study.flags();
            f.extend(a.run.flags());
            f.extend([("seed", s(&a.seed)), ("iv_noise", s(&a.iv_noise)), ("wing", s(&a.wing))]);
            (Settings::new("synth", &with_study_keys(SYNTH_KEYS)), f, synth)
        }
        Command::Calibrate(a) => {
            let mut f = a.study.flags();
            f.extend(a.run.flags());
            f.extend([
                ("data", path(&a.data)),
                ("quotes", path(&a.quotes)),
                ("truth", path(&a.truth)),
                ("eta", s(&a.eta)),
                ("rho", s(&a.rho)),
                ("levels", a.levels.clone()),
            ]);
            (Settings::new("calibrate", &with_study_keys(CALIBRATE_KEYS)), f, calibrate)
        }
        Command::Meshsweep(a) => {
            let mut f = a.study.flags();
            f.extend(a.run.flags());
            f.extend([("seed", s(&a.seed)), ("seeds", s(&a.seeds)), ("control_beta", s(&a.control_beta))]);
            (Settings::new("meshsweep", &with_study_keys(MESHSWEEP_KEYS)), f, meshsweep)
        }
        Command::Rates(a) => {
            let mut f = a.study.flags();
            f.extend(a.run.flags());
            f.extend([
                ("seed", s(&a.seed)),
                ("seeds", s(&a.seeds)),
                ("truth", a.truth.clone()),
                ("delta0", s(&a.delta0)),
                ("octaves", s(&a.octaves)),
                ("beta_factor", s(&a.beta_factor)),
                ("gamma", a.gamma.then(|| "true".to_string())),
            ]);
            (Settings::new("rates", &with_study_keys(RATES_KEYS)), f, rates)
        }
        Command::Imply(a) => {
            let f = vec![
                ("spot", s(&a.spot)),
                ("rate", s(&a.rate)),
                ("price", s(&a.price)),
                ("strike", s(&a.strike)),
                ("maturity", s(&a.maturity)),
                ("quotes", path(&a.quotes)),
                ("out", path(&a.out)),
            ];
            (Settings::new("imply", IMPLY_KEYS), f, imply)
        }
        Command::Validate(a) => {
            let f = vec![
                ("spot", s(&a.spot)),
                ("rate", s(&a.rate)),
                ("a_lower", s(&a.a_lower)),
                ("a_upper", s(&a.a_upper)),
                ("a_hat", path(&a.a_hat)),
                ("quotes", path(&a.quotes)),
                ("bins", a.bins.clone()),
                ("out", path(&a.out)),
            ];
            (Settings::new("validate", VALIDATE_KEYS), f, validate)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::DegeneratePair(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).init();

    let (mut settings, flags, run) = build(&cli.command);
    let result = cli
        .config
        .as_deref()
        .map_or(Ok(()), |p| settings.apply_file(p))
        .and_then(|()| {
            settings.apply_flags(flags);
            run(&settings)
        });
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: discrepancy condition not met; results were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
