use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gsr_nls::analysis::{best_fit, emit_histogram, oracle_residuals, run_benchmark, write_bench_csv};
use gsr_nls::image::{add_gaussian_noise, psnr};
use gsr_nls::io::{read_image, write_image};
use gsr_nls::{default_params, denoise, GsrParams, Mode, NoiseSpec};

mod config;

use config::ConfigFile;

/// Grayscale image denoising by group sparsity residual with non-local samples.
#[derive(Debug, Parser)]
#[command(name = "gsr-nls", version)]
struct Cli {
    /// Worker threads for the per-patch loop (default: all cores).
    #[arg(long, global = true, env = "GSR_NLS_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Denoise an image corrupted by additive white Gaussian noise.
    Denoise(DenoiseArgs),
    /// Add seeded Gaussian noise to an image.
    AddNoise(AddNoiseArgs),
    /// Print the PSNR between two images ("inf" if identical).
    Psnr(PsnrArgs),
    /// Fit Gaussian, Laplacian and hyper-Laplacian models to the group sparsity residual.
    ResidualHist(ResidualHistArgs),
    /// Benchmark every image of a directory over a list of noise levels.
    Bench(BenchArgs),
}

/// Overrides of individual denoiser parameters.
#[derive(Debug, Args, Default)]
struct ParamOverrides {
    /// Patch side length.
    #[arg(long)]
    patch_side: Option<usize>,
    /// Anchor stride in pixels.
    #[arg(long)]
    stride: Option<usize>,
    /// Block-matching search window side.
    #[arg(long)]
    window: Option<usize>,
    /// Patches per group.
    #[arg(long)]
    m: Option<usize>,
    /// Threshold scale.
    #[arg(long)]
    c: Option<f64>,
    /// Fraction of the noisy image fed back each iteration.
    #[arg(long)]
    eta: Option<f64>,
    /// Noise re-estimation factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Non-local weight bandwidth.
    #[arg(long)]
    h: Option<f64>,
    /// Relative-change stopping tolerance.
    #[arg(long)]
    tau: Option<f64>,
    /// Threshold regularizer added to the residual spread.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Maximum number of outer iterations.
    #[arg(long)]
    max_iter: Option<usize>,
}

impl ParamOverrides {
    fn apply(&self, p: &mut GsrParams) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { p.$field = v; })*
            };
        }
        set!(patch_side, stride, window, m, c, eta, gamma, h, tau, epsilon, max_iter);
    }
}

#[derive(Debug, Args)]
struct DenoiseArgs {
    /// Noisy input image (.pgm or .png).
    #[arg(long)]
    input: PathBuf,
    /// Noise standard deviation; selects the parameter schedule.
    #[arg(long)]
    sigma: Option<f64>,
    /// Output image (.pgm or .png).
    #[arg(long)]
    output: PathBuf,
    /// Write per-iteration statistics to this CSV file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// gsr (non-local reference) or gsc (zero reference baseline).
    #[arg(long)]
    mode: Option<Mode>,
    /// Clean image; adds PSNR to the summary and the report.
    #[arg(long)]
    clean: Option<PathBuf>,
    /// `key = value` parameter file, applied before explicit flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ParamOverrides,
}

#[derive(Debug, Args)]
struct AddNoiseArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output image; values are clamped to [0, 255] on write.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PsnrArgs {
    /// Reference image.
    a: PathBuf,
    /// Test image.
    b: PathBuf,
}

#[derive(Debug, Args)]
struct ResidualHistArgs {
    /// Clean image.
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Histogram CSV to write.
    #[arg(long)]
    output: PathBuf,
    /// Write log10 densities instead of densities.
    #[arg(long)]
    log: bool,
    /// Anchor stride (default: the schedule's).
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory of clean .pgm/.png images.
    #[arg(long)]
    images: PathBuf,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',', default_value = "20,40,50,75")]
    sigmas: Vec<f64>,
    /// Comma-separated methods (gsr, gsc).
    #[arg(long, value_delimiter = ',', default_value = "gsr")]
    methods: Vec<Mode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Benchmark CSV to write.
    #[arg(long)]
    output: PathBuf,
    /// Write 0 in the time_s column so reruns are byte-identical.
    #[arg(long)]
    no_time: bool,
    #[command(flatten)]
    overrides: ParamOverrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    match cli.command {
        Command::Denoise(a) => cmd_denoise(a),
        Command::AddNoise(a) => cmd_add_noise(a),
        Command::Psnr(a) => cmd_psnr(a),
        Command::ResidualHist(a) => cmd_residual_hist(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn load(path: &Path) -> Result<gsr_nls::GrayImage> {
    read_image(path).with_context(|| format!("cannot read image {}", path.display()))
}

fn denoise_params(args: &DenoiseArgs) -> Result<GsrParams> {
    let config = args.config.as_deref().map(ConfigFile::read).transpose()?;
    let config_sigma = config.as_ref().map(|c| c.sigma_n()).transpose()?.flatten();
    let sigma = match args.sigma.or(config_sigma) {
        Some(s) => s,
        None => bail!("--sigma is required (or sigma_n in the config file)"),
    };
    let mut params = default_params(sigma)?;
    if let Some(c) = &config {
        c.apply(&mut params)?;
    }
    args.overrides.apply(&mut params);
    if let Some(mode) = args.mode {
        params.mode = mode;
    }
    params.validate()?;
    Ok(params)
}

fn cmd_denoise(args: DenoiseArgs) -> Result<()> {
    let params = denoise_params(&args)?;
    let noisy = load(&args.input)?;
    let clean = args.clean.as_deref().map(load).transpose()?;
    let report = denoise(&noisy, &params, clean.as_ref())?;
    write_image(&report.output, &args.output)
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    if let Some(path) = &args.report {
        report
            .write_iterations_csv(path)
            .with_context(|| format!("cannot write report {}", path.display()))?;
    }
    let mut line = format!(
        "iterations {}  final relative change {:.3e}  wall time {:.2} s",
        report.iterations_run,
        report.final_relative_change().unwrap_or(f64::NAN),
        report.wall_time.as_secs_f64()
    );
    if let Some(c) = &clean {
        line.push_str(&format!("  PSNR {} dB", fmt_db(psnr(c, &report.output.quantized())?)));
    }
    println!("{line}");
    Ok(())
}

fn cmd_add_noise(args: AddNoiseArgs) -> Result<()> {
    let clean = load(&args.input)?;
    let noisy = add_gaussian_noise(&clean, NoiseSpec::new(args.sigma, args.seed)?)?;
    write_image(&noisy, &args.output)
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    let diffs: Vec<f64> = noisy
        .pixels()
        .iter()
        .zip(clean.pixels())
        .map(|(a, b)| a - b)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    println!("empirical noise std {std:.4} (before clamping)");
    Ok(())
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn cmd_psnr(args: PsnrArgs) -> Result<()> {
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    println!("{}", fmt_db(psnr(&a, &b)?));
    Ok(())
}

fn cmd_residual_hist(args: ResidualHistArgs) -> Result<()> {
    if args.bins < 2 {
        bail!("--bins must be at least 2");
    }
    let clean = load(&args.clean)?;
    let noisy = add_gaussian_noise(&clean, NoiseSpec::new(args.sigma, args.seed)?)?;
    // sigma = 0 has no schedule band; group with the lowest band
    let mut params = default_params(if args.sigma > 0.0 { args.sigma } else { 10.0 })?;
    if let Some(s) = args.stride {
        params.stride = s;
    }
    let samples = oracle_residuals(&clean, &noisy, &params)?;
    let (fits, _) = emit_histogram(&samples, args.bins, args.log, &args.output)
        .with_context(|| format!("cannot emit histogram {}", args.output.display()))?;
    println!("samples {}", samples.len());
    for f in &fits {
        println!(
            "{:<16} scale {:>10.4}  shape {:.1}  log-likelihood {:.2}",
            f.family, f.scale, f.shape, f.log_likelihood
        );
    }
    if let Some(best) = best_fit(&fits) {
        println!("winner: {}", best.family);
    }
    Ok(())
}

fn bench_images(dir: &Path) -> Result<Vec<(String, gsr_nls::GrayImage)>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read image directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .pgm or .png images in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, load(p)?))
        })
        .collect()
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let images = bench_images(&args.images)?;
    let mut report = run_benchmark(&images, &args.sigmas, &args.methods, args.seed, |p| {
        args.overrides.apply(p)
    });
    if args.no_time {
        for row in &mut report.rows {
            row.time_s = 0.0;
        }
    }
    write_bench_csv(&report.rows, &args.output)
        .with_context(|| format!("cannot write {}", args.output.display()))?;
    print!("{}", report.summary);
    let failed = report.summary.failures.len();
    if failed > 0 {
        bail!("{failed} benchmark case(s) failed");
    }
    Ok(())
}
