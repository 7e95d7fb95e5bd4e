//! The `kdrsdl` command-line tool.
//!
//! Every subcommand writes its artifacts under `--out-dir`, always including
//! `manifest.json` (all effective parameters and the seed) and `metrics.csv`
//! (`metric,value` rows, see below). Wall-clock time goes to `timing.csv`
//! so that the other files are byte-identical across repeated runs.
//!
//! Exit status: 0 on success, 1 when the solver fails numerically, 2 for
//! usage and input errors (bad flags, unreadable or malformed files,
//! mismatched masks, single-class masks).
//!
//! `metrics.csv` rows, in order:
//!
//! | command     | metrics |
//! |-------------|---------|
//! | `synth`     | `rel_err_L`, `rel_err_E`, `density_E_true`, `density_E`, `rank_A`, `rank_B`, `iterations`, `converged`, `err_rec`, `err_split` |
//! | `decompose` | `density_E`, `rank_A`, `rank_B`, `iterations`, `converged`, `err_rec`, `err_split` |
//! | `rpca`      | `density_E`, `rank_L`, `iterations`, `converged`, `residual` |
//! | `bgsub`     | `auc`, `frames`, `iterations`, `converged` |
//! | `denoise`   | `psnr_mean`, `psnr_noisy_mean`, `iterations`, `converged`, then `psnr_NNNN`, `psnr_noisy_NNNN` per image |
//! | `eval`      | `rel_err`, `mse`, `psnr`, `density_estimate`, `density_truth` |
//!
//! `rel_err_E` is relative to the true outliers, or to `‖X‖_F` when the data
//! is uncorrupted. `eval` reports `rel_err` as `‖estimate‖_F` when the
//! truth is all zero. Densities count nonzero entries. Ranks are numerical ranks
//! at `10⁻⁶ σ₁`. `converged` is 1 or 0. PSNR values are in dB; identical
//! images give `inf`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::metrics::{self, MetricsReport};
use crate::numerics::thin_svd;
use crate::rpca;
use crate::solver::{solve, KdrsdlFactorization, SolveError, SolverConfig};
use crate::storage::{self, ImageKind, Manifest};
use crate::synth::{self, SyntheticSpec};
use crate::tensor::{Matrix, Tensor3};

#[derive(Debug, Parser)]
#[command(name = "kdrsdl", version, about = "Robust low-rank plus sparse tensor factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic data, decompose it and score the recovery.
    Synth(SynthArgs),
    /// Decompose a tensor stored as .kdt.
    Decompose(DecomposeArgs),
    /// Matrix robust PCA baseline on a tensor flattened slice-per-column.
    Rpca(RpcaArgs),
    /// Background subtraction on a grayscale frame sequence.
    Bgsub(BgsubArgs),
    /// Salt-and-pepper denoising of an image stack.
    Denoise(DenoiseArgs),
    /// Compare an estimate against a reference tensor.
    Eval(EvalArgs),
}

/// Solver options shared by the subcommands that run the factorization.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Core size r [default: min(m, n), 10 for synth]
    #[arg(long)]
    pub r: Option<usize>,
    /// Outlier weight [default: 1/sqrt(max(m, n))]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Core sparsity weight [default depends on the command]
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = SolverConfig::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn config(&self, m: usize, n: usize, default_alpha: f64) -> SolverConfig {
        let mut cfg = SolverConfig::for_shape(m, n);
        if let Some(r) = self.r {
            cfg.rank = r;
        }
        if let Some(lambda) = self.lambda {
            cfg.lambda = lambda;
        }
        cfg.alpha = self.alpha.unwrap_or(default_alpha);
        cfg.epsilon = self.epsilon;
        cfg.max_iter = self.max_iter;
        cfg
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub num_slices: usize,
    #[arg(long, default_value_t = 5)]
    pub rank_a: usize,
    #[arg(long, default_value_t = 5)]
    pub rank_b: usize,
    /// Probability that an outlier entry is zero.
    #[arg(long, default_value_t = 0.7)]
    pub zero_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct RpcaArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// [default: 1/sqrt(max(m·n, N))]
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = rpca::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[arg(long, default_value_t = rpca::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pooling {
    /// One AUC over every pixel of every frame.
    Pooled,
    /// Mean of the AUCs of frames that contain both classes.
    PerFrame,
}

#[derive(Debug, Args)]
pub struct BgsubArgs {
    /// Glob of PGM frames, taken in sorted order.
    #[arg(long)]
    pub frames: String,
    /// Glob of PGM masks (foreground > 0.5), one per frame.
    #[arg(long)]
    pub mask_frames: String,
    #[arg(long, value_enum, default_value_t = Pooling::Pooled)]
    pub pooling: Pooling,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Kdrsdl,
    Rpca,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Glob of PGM or PPM images of equal size, taken in sorted order.
    #[arg(long)]
    pub images: String,
    /// Fraction of entries hit by an impulse.
    #[arg(long)]
    pub noise_level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Method::Kdrsdl)]
    pub method: Method,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Why a command failed, and which exit status that maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Input(Error),
    Solver(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Input(_) => 2,
            Failure::Solver(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "{msg}"),
            Failure::Input(e) => write!(f, "{e}"),
            Failure::Solver(e) => write!(f, "solver failed: {e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Input(other),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Rpca(a) => cmd_rpca(a),
        Command::Bgsub(a) => cmd_bgsub(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn run_solver(x: &Tensor3, cfg: &SolverConfig, out_dir: &Path) -> Result<KdrsdlFactorization, Failure> {
    cfg.validate(x.rows(), x.cols())?;
    match solve(x, cfg) {
        Ok(fac) => {
            if !fac.converged {
                eprintln!(
                    "warning: no convergence within {} iterations (err_rec {:e}, err_split {:e})",
                    fac.iterations,
                    fac.trace.last().map_or(f64::NAN, |t| t.err_rec),
                    fac.trace.last().map_or(f64::NAN, |t| t.err_split),
                );
            }
            Ok(fac)
        }
        Err(SolveError { source, trace }) => {
            // keep the partial trace for diagnosis
            let _ = fs::write(out_dir.join(storage::TRACE_FILE), storage::trace_csv(&trace));
            eprintln!("solver stopped after {} recorded iterations", trace.len());
            Err(Failure::Solver(source))
        }
    }
}

fn numerical_rank(x: &Matrix) -> Result<usize, Failure> {
    let s = thin_svd(x)?.singular_values;
    let top = s.iter().copied().fold(0.0, f64::max);
    Ok(s.iter().filter(|&&v| v > 1e-6 * top).count())
}

fn push_solver_metrics(report: &mut MetricsReport, fac: &KdrsdlFactorization) {
    let last = fac.trace.last();
    report
        .push("iterations", fac.iterations as f64)
        .push("converged", if fac.converged { 1.0 } else { 0.0 })
        .push("err_rec", last.map_or(f64::NAN, |t| t.err_rec))
        .push("err_split", last.map_or(f64::NAN, |t| t.err_split));
}

fn finish(out_dir: &Path, report: &MetricsReport, started: Instant) -> CmdResult {
    storage::write_metrics(out_dir.join(storage::METRICS_FILE), report)?;
    let mut timing = MetricsReport::new();
    timing.push("wall_time_s", started.elapsed().as_secs_f64());
    storage::write_metrics(out_dir.join("timing.csv"), &timing)?;
    print!("{}", storage::metrics_csv(report));
    Ok(())
}

fn check_unit_interval(name: &str, v: f64) -> CmdResult {
    if !(0.0..=1.0).contains(&v) {
        return Err(Failure::Usage(format!("--{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Width of the generated bases, and the solver's core size, unless `--r` is given.
pub const SYNTH_DEFAULT_R: usize = 10;

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let started = Instant::now();
    let mut cfg = args.solver.config(args.m, args.n, SolverConfig::DEFAULT_ALPHA);
    cfg.rank = args.solver.r.unwrap_or(SYNTH_DEFAULT_R);
    let spec = SyntheticSpec {
        m: args.m,
        n: args.n,
        depth: args.num_slices,
        rank_a: args.rank_a,
        rank_b: args.rank_b,
        r: cfg.rank,
        zero_prob: args.zero_prob,
        seed: args.seed,
    };
    spec.validate()?;
    cfg.validate(args.m, args.n)?;
    storage::ensure_dir(&args.out_dir)?;

    let (x, truth) = synth::generate(&spec)?;
    storage::write_tensor(args.out_dir.join("X.kdt"), &x)?;
    storage::write_tensor(args.out_dir.join("L_true.kdt"), &truth.low_rank)?;
    storage::write_tensor(args.out_dir.join("E_true.kdt"), &truth.outliers)?;

    let fac = run_solver(&x, &cfg, &args.out_dir)?;
    let manifest = Manifest::new("synth")
        .with_seed(args.seed)
        .with_solver(&cfg)
        .param("m", args.m)
        .param("n", args.n)
        .param("num_slices", args.num_slices)
        .param("rank_a", args.rank_a)
        .param("rank_b", args.rank_b)
        .param("zero_prob", args.zero_prob);
    storage::write_bundle(&args.out_dir, &fac, &manifest)?;

    let low_rank = fac.low_rank()?;
    storage::write_tensor(args.out_dir.join("L.kdt"), &low_rank)?;
    let err_e = match metrics::relative_error(&fac.outliers, &truth.outliers) {
        Err(Error::ZeroNorm) => fac.outliers.norm() / x.norm().max(f64::MIN_POSITIVE),
        other => other?,
    };
    let mut report = MetricsReport::new();
    report
        .push("rel_err_L", metrics::relative_error(&low_rank, &truth.low_rank)?)
        .push("rel_err_E", err_e)
        .push("density_E_true", synth::density(&truth.outliers, 0.0))
        .push("density_E", synth::density(&fac.outliers, 0.0))
        .push("rank_A", numerical_rank(&fac.a)? as f64)
        .push("rank_B", numerical_rank(&fac.b)? as f64);
    push_solver_metrics(&mut report, &fac);
    finish(&args.out_dir, &report, started)
}

fn cmd_decompose(args: DecomposeArgs) -> CmdResult {
    let started = Instant::now();
    let x = storage::read_tensor(&args.input)?;
    let cfg = args.solver.config(x.rows(), x.cols(), SolverConfig::DEFAULT_ALPHA);
    cfg.validate(x.rows(), x.cols())?;
    storage::ensure_dir(&args.out_dir)?;

    let fac = run_solver(&x, &cfg, &args.out_dir)?;
    let manifest = Manifest::new("decompose")
        .with_solver(&cfg)
        .param("input", args.input.display().to_string());
    storage::write_bundle(&args.out_dir, &fac, &manifest)?;
    storage::write_tensor(args.out_dir.join("L.kdt"), &fac.low_rank()?)?;

    let mut report = MetricsReport::new();
    report
        .push("density_E", synth::density(&fac.outliers, 0.0))
        .push("rank_A", numerical_rank(&fac.a)? as f64)
        .push("rank_B", numerical_rank(&fac.b)? as f64);
    push_solver_metrics(&mut report, &fac);
    finish(&args.out_dir, &report, started)
}

fn cmd_rpca(args: RpcaArgs) -> CmdResult {
    let started = Instant::now();
    let x = storage::read_tensor(&args.input)?;
    let flat = rpca::matricize(&x);
    let lambda = args.lambda.unwrap_or_else(|| rpca::default_lambda(&flat));
    storage::ensure_dir(&args.out_dir)?;
    Manifest::new("rpca")
        .param("input", args.input.display().to_string())
        .param("lambda", lambda)
        .param("epsilon", args.epsilon)
        .param("max_iter", args.max_iter)
        .write(args.out_dir.join(storage::MANIFEST_FILE))?;

    let res = rpca::rpca_ialm(&flat, lambda, args.epsilon, args.max_iter)
        .map_err(|e| match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Solver(other),
        })?;
    let low = rpca::fold(&res.low_rank, x.rows(), x.cols())?;
    let sparse = rpca::fold(&res.sparse, x.rows(), x.cols())?;
    storage::write_tensor(args.out_dir.join("L.kdt"), &low)?;
    storage::write_tensor(args.out_dir.join("E.kdt"), &sparse)?;

    let residual = (&flat - &res.low_rank - &res.sparse).norm() / flat.norm().max(f64::MIN_POSITIVE);
    let mut report = MetricsReport::new();
    report
        .push("density_E", synth::density(&sparse, 0.0))
        .push("rank_L", numerical_rank(&res.low_rank)? as f64)
        .push("iterations", res.iterations as f64)
        .push("converged", if res.converged { 1.0 } else { 0.0 })
        .push("residual", residual);
    finish(&args.out_dir, &report, started)
}

fn expand(pattern: &str, what: &str) -> Result<Vec<PathBuf>, Failure> {
    let paths = storage::glob_paths(pattern)?;
    if paths.is_empty() {
        return Err(Failure::Usage(format!("--{what} {pattern:?} matches no files")));
    }
    Ok(paths)
}

fn read_gray_stack(paths: &[PathBuf], what: &str) -> Result<Tensor3, Failure> {
    match storage::read_image_stack(paths)? {
        (ImageKind::Gray, t) => Ok(t),
        (ImageKind::Color, _) => Err(Failure::Usage(format!("--{what} must be grayscale PGM"))),
    }
}

/// Background subtraction scored as pixel classification by `|E|`.
fn bgsub_auc(outliers: &Tensor3, masks: &Tensor3, pooling: Pooling) -> Result<f64, Failure> {
    let labels: Vec<bool> = masks.as_slice().iter().map(|&v| v > 0.5).collect();
    let scores: Vec<f64> = outliers.as_slice().iter().map(|v| v.abs()).collect();
    match pooling {
        Pooling::Pooled => Ok(metrics::roc_auc(&scores, &labels)?),
        Pooling::PerFrame => {
            let len = masks.rows() * masks.cols();
            let aucs: Vec<f64> = scores
                .chunks(len)
                .zip(labels.chunks(len))
                .filter_map(|(s, l)| metrics::roc_auc(s, l).ok())
                .collect();
            if aucs.is_empty() {
                return Err(Failure::Input(Error::SingleClass));
            }
            Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
        }
    }
}

fn cmd_bgsub(args: BgsubArgs) -> CmdResult {
    let started = Instant::now();
    let frame_paths = expand(&args.frames, "frames")?;
    let mask_paths = expand(&args.mask_frames, "mask-frames")?;
    if frame_paths.len() != mask_paths.len() {
        return Err(Failure::Usage(format!(
            "{} frames but {} masks",
            frame_paths.len(),
            mask_paths.len()
        )));
    }
    let frames = read_gray_stack(&frame_paths, "frames")?;
    let masks = read_gray_stack(&mask_paths, "mask-frames")?;
    if frames.shape() != masks.shape() {
        return Err(Failure::Usage(format!(
            "masks are {}x{}, frames are {}x{}",
            masks.cols(),
            masks.rows(),
            frames.cols(),
            frames.rows()
        )));
    }
    if masks.as_slice().iter().all(|&v| v > 0.5) || masks.as_slice().iter().all(|&v| v <= 0.5) {
        return Err(Failure::Input(Error::SingleClass));
    }
    let cfg = args.solver.config(frames.rows(), frames.cols(), 1e-2);
    cfg.validate(frames.rows(), frames.cols())?;
    storage::ensure_dir(&args.out_dir)?;

    let fac = run_solver(&frames, &cfg, &args.out_dir)?;
    let pooling = match args.pooling {
        Pooling::Pooled => "pooled",
        Pooling::PerFrame => "per-frame",
    };
    Manifest::new("bgsub")
        .with_solver(&cfg)
        .param("frames", &args.frames)
        .param("mask_frames", &args.mask_frames)
        .param("pooling", pooling)
        .write(args.out_dir.join(storage::MANIFEST_FILE))?;
    let auc = bgsub_auc(&fac.outliers, &masks, args.pooling)?;

    let low_rank = fac.low_rank()?;
    let peak = fac.outliers.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    for k in 0..frames.depth() {
        let fg = fac.outliers.slice(k).map(|v| v.abs() * scale);
        storage::write_image(args.out_dir.join(format!("foreground_{k:04}.pgm")), &fg)?;
        storage::write_image(
            args.out_dir.join(format!("background_{k:04}.pgm")),
            &low_rank.frontal_slice(k)?,
        )?;
    }

    let mut report = MetricsReport::new();
    report
        .push("auc", auc)
        .push("frames", frames.depth() as f64)
        .push("iterations", fac.iterations as f64)
        .push("converged", if fac.converged { 1.0 } else { 0.0 });
    finish(&args.out_dir, &report, started)
}

/// Salt-and-pepper corruption: each entry independently, with probability
/// `level`, receives a `±1` impulse and is clamped back to `[0, 1]`.
pub fn add_impulses(t: &Tensor3, level: f64, seed: u64) -> Tensor3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = t.as_slice().to_vec();
    for v in data.iter_mut() {
        if rng.random::<f64>() < level {
            let impulse = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *v = (*v + impulse).clamp(0.0, 1.0);
        }
    }
    Tensor3::from_vec(t.rows(), t.cols(), t.depth(), data).expect("same shape, finite")
}

fn quantized(t: &Tensor3) -> Tensor3 {
    t.map(|v| storage::quantize(v) as f64 / 255.0)
}

fn write_stack(dir: &Path, prefix: &str, kind: ImageKind, t: &Tensor3) -> CmdResult {
    let c = kind.channels();
    for img in 0..t.depth() / c {
        let slices: Vec<Matrix> = (img * c..(img + 1) * c)
            .map(|k| t.frontal_slice(k))
            .collect::<Result<_, _>>()?;
        match kind {
            ImageKind::Gray => {
                storage::write_image(dir.join(format!("{prefix}_{img:04}.pgm")), &slices[0])?
            }
            ImageKind::Color => storage::write_ppm(
                dir.join(format!("{prefix}_{img:04}.ppm")),
                &Tensor3::from_slices(&slices)?,
            )?,
        }
    }
    Ok(())
}

fn image_psnrs(estimate: &Tensor3, reference: &Tensor3, channels: usize) -> Result<Vec<f64>, Failure> {
    let len = reference.rows() * reference.cols() * channels;
    estimate
        .as_slice()
        .chunks(len)
        .zip(reference.as_slice().chunks(len))
        .map(|(e, r)| Ok(metrics::psnr_from_mse(metrics::mse(e, r)?, 1.0)?))
        .collect()
}

fn cmd_denoise(args: DenoiseArgs) -> CmdResult {
    let started = Instant::now();
    check_unit_interval("noise-level", args.noise_level)?;
    let paths = expand(&args.images, "images")?;
    let (kind, clean) = storage::read_image_stack(&paths)?;
    let (m, n) = (clean.rows(), clean.cols());
    let default_alpha = if args.noise_level <= 0.3 { 1e-3 } else { 1e-2 };
    let cfg = args.solver.config(m, n, default_alpha);
    storage::ensure_dir(&args.out_dir)?;

    let noisy = add_impulses(&clean, args.noise_level, args.seed);
    let mut manifest = Manifest::new("denoise")
        .with_seed(args.seed)
        .param("images", &args.images)
        .param("noise_level", args.noise_level);
    let (recovered, iterations, converged) = match args.method {
        Method::Kdrsdl => {
            cfg.validate(m, n)?;
            manifest = manifest.with_solver(&cfg).param("method", "kdrsdl");
            let fac = run_solver(&noisy, &cfg, &args.out_dir)?;
            (fac.low_rank()?, fac.iterations, fac.converged)
        }
        Method::Rpca => {
            let flat = rpca::matricize(&noisy);
            let lambda = args.solver.lambda.unwrap_or_else(|| rpca::default_lambda(&flat));
            manifest = manifest
                .param("method", "rpca")
                .param("lambda", lambda)
                .param("epsilon", rpca::DEFAULT_EPSILON)
                .param("max_iter", args.solver.max_iter);
            let res = rpca::rpca_ialm(&flat, lambda, rpca::DEFAULT_EPSILON, args.solver.max_iter)
                .map_err(Failure::Solver)?;
            (rpca::fold(&res.low_rank, m, n)?, res.iterations, res.converged)
        }
    };
    manifest.write(args.out_dir.join(storage::MANIFEST_FILE))?;

    // score what is actually written: 8-bit images
    let recovered = quantized(&recovered);
    write_stack(&args.out_dir, "noisy", kind, &noisy)?;
    write_stack(&args.out_dir, "denoised", kind, &recovered)?;
    let channels = kind.channels();
    let psnr = image_psnrs(&recovered, &clean, channels)?;
    let psnr_noisy = image_psnrs(&noisy, &clean, channels)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

    let mut report = MetricsReport::new();
    report
        .push("psnr_mean", mean(&psnr))
        .push("psnr_noisy_mean", mean(&psnr_noisy))
        .push("iterations", iterations as f64)
        .push("converged", if converged { 1.0 } else { 0.0 });
    for (i, (p, q)) in psnr.iter().zip(&psnr_noisy).enumerate() {
        report.push(format!("psnr_{i:04}"), *p).push(format!("psnr_noisy_{i:04}"), *q);
    }
    finish(&args.out_dir, &report, started)
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let started = Instant::now();
    let estimate = storage::read_tensor(&args.estimate)?;
    let truth = storage::read_tensor(&args.truth)?;
    if estimate.shape() != truth.shape() {
        return Err(Failure::Usage(format!(
            "estimate is {:?}, truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    storage::ensure_dir(&args.out_dir)?;
    Manifest::new("eval")
        .param("estimate", args.estimate.display().to_string())
        .param("truth", args.truth.display().to_string())
        .write(args.out_dir.join(storage::MANIFEST_FILE))?;

    let mse = metrics::mse(estimate.as_slice(), truth.as_slice())?;
    let range = metrics::dynamic_range(truth.as_slice());
    let peak = if range > 0.0 { range } else { 1.0 };
    let rel = match metrics::relative_error(&estimate, &truth) {
        Err(Error::ZeroNorm) => estimate.norm(),
        other => other?,
    };
    let mut report = MetricsReport::new();
    report
        .push("rel_err", rel)
        .push("mse", mse)
        .push("psnr", metrics::psnr_from_mse(mse, peak)?)
        .push("density_estimate", synth::density(&estimate, 0.0))
        .push("density_truth", synth::density(&truth, 0.0));
    finish(&args.out_dir, &report, started)
}
