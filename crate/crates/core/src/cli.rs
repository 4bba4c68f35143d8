//! The `nnfn` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical failure.
//! `NNFN_THREADS` overrides `--threads`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::harness::{
    export_shrinkage_curve, run_experiment, shrinkage_csv, write_file, ExperimentConfig,
};
use crate::io::{load_image, save_image};
use crate::noise::{add_awgn, estimate_noise_mad, ChannelNoise};
use crate::pipeline::{denoise_with_reference, traces_to_csv, DenoiseParams, SigmaUpdate};
use crate::solver::{ProxRule, SolverParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const THREADS_ENV: &str = "NNFN_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nnfn", version, about = "Color image denoising by MC-NNFNM")]
pub struct Cli {
    /// Worker threads (0 = all cores). NNFN_THREADS takes precedence.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Denoise an image with known (or estimated) per-channel noise levels.
    Denoise(DenoiseArgs),
    /// Add Gaussian noise to a clean image.
    Synth(SynthArgs),
    /// Run a JSON experiment configuration.
    Bench(BenchArgs),
    /// Print the scalar shrinkage curve as CSV.
    ProxCurve(ProxCurveArgs),
    /// Print MAD noise estimates per channel.
    EstimateNoise(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Settings for synthetic Gaussian noise.
    Synthetic,
    /// Settings for real camera noise.
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaUpdateArg {
    Fixed,
    Residual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProxRuleArg {
    Thresholded,
    Exact,
}

impl From<ProxRuleArg> for ProxRule {
    fn from(r: ProxRuleArg) -> Self {
        match r {
            ProxRuleArg::Thresholded => ProxRule::Thresholded,
            ProxRuleArg::Exact => ProxRule::Exact,
        }
    }
}

fn parse_sigma(s: &str) -> std::result::Result<ChannelNoise, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let values: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let arr = match values.as_slice() {
        [v] => [*v; 3],
        [r, g, b] => [*r, *g, *b],
        _ => return Err("expected r,g,b or a single value".into()),
    };
    ChannelNoise::from_array(arr).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Noise levels `r,g,b` on the [0, 255] scale; estimated when omitted.
    #[arg(long, value_parser = parse_sigma)]
    pub sigma: Option<ChannelNoise>,
    /// Clean image for per-iteration PSNR reporting.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "synthetic")]
    pub preset: Preset,
    #[arg(long, default_value_t = 6)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    #[arg(long, default_value_t = 60)]
    pub group_size: usize,
    #[arg(long, default_value_t = 5)]
    pub outer_iters: usize,
    /// [default: 0.86, real preset 4.86]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// [default: 1.9, real preset 1.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// [default: 0.86, real preset 4.55]
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long, default_value_t = 1.001)]
    pub mu: f64,
    #[arg(long, default_value_t = 10)]
    pub inner_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "thresholded")]
    pub prox_rule: ProxRuleArg,
    #[arg(long, value_enum, default_value = "fixed")]
    pub sigma_update: SigmaUpdateArg,
    /// Recorded in the report; denoising itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write a JSON run report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write per-group ADMM traces as CSV here.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
}

impl DenoiseArgs {
    pub fn params(&self) -> DenoiseParams {
        let base = match self.preset {
            Preset::Synthetic => SolverParams::default(),
            Preset::Real => SolverParams::real_noise(),
        };
        let solver = SolverParams {
            lambda: self.lambda.unwrap_or(base.lambda),
            alpha: self.alpha.unwrap_or(base.alpha),
            rho0: self.rho0.unwrap_or(base.rho0),
            mu: self.mu,
            tau: self.tol,
            max_iters: self.inner_iters,
            prox_rule: self.prox_rule.into(),
            record_objective: false,
        };
        DenoiseParams {
            patch_size: self.patch_size,
            stride: self.stride,
            window: self.window,
            group_size: self.group_size,
            outer_iters: self.outer_iters,
            solver,
            sigma_update: match self.sigma_update {
                SigmaUpdateArg::Fixed => SigmaUpdate::Fixed,
                SigmaUpdateArg::Residual => SigmaUpdate::Residual,
            },
            record_diagnostics: self.diagnostics.is_some(),
            ..DenoiseParams::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to `<input stem>_noisy.png` next to the input.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_parser = parse_sigma)]
    pub sigma: ChannelNoise,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProxCurveArgs {
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,1.9")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_max: f64,
    #[arg(long, default_value_t = 101)]
    pub points: usize,
    #[arg(long, value_enum, default_value = "thresholded")]
    pub rule: ProxRuleArg,
    /// Accepted for uniformity; the curve is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Accepted for uniformity; the estimate is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) => EXIT_IO,
        Error::Numerical { .. } | Error::Consistency(_) => EXIT_NUMERICAL,
        Error::Group { source, .. } => exit_code(source),
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => EXIT_USAGE,
    }
}

fn thread_count(flag: usize) -> std::result::Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(flag),
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status. Diagnostics go to stderr as a single line.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("nnfn: {}", first.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(n) => n,
        Err(msg) => {
            eprintln!("nnfn: {msg}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("nnfn: cannot start worker pool: {e}");
            return EXIT_USAGE;
        }
    };
    log::info!("worker threads: {}", pool.current_num_threads());
    match pool.install(|| run(&cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("nnfn: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Denoise(a) => run_denoise(a),
        Command::Synth(a) => run_synth(a),
        Command::Bench(a) => run_bench(a),
        Command::ProxCurve(a) => run_prox_curve(a),
        Command::EstimateNoise(a) => run_estimate(a),
    }
}

fn run_denoise(args: &DenoiseArgs) -> Result<()> {
    let params = args.params();
    params.validate()?;
    let noisy = load_image(&args.input)?;
    let reference = args.reference.as_deref().map(load_image).transpose()?;
    let noise = match args.sigma {
        Some(s) => s,
        None => {
            let est = estimate_noise_mad(&noisy)?;
            log::info!("estimated noise levels: {est}");
            est
        }
    };
    log::info!(
        "denoise {}: noise {noise}, seed {}, params {}",
        args.input.display(),
        args.seed,
        serde_json::to_string(&params)?
    );
    let mut out = denoise_with_reference(&noisy, &noise, &params, reference.as_ref())?;
    out.report.seed = Some(args.seed);
    save_image(&out.image, &args.output)?;
    if let Some(path) = &args.report {
        write_file(path, &serde_json::to_string_pretty(&out.report)?)?;
    }
    if let Some(path) = &args.diagnostics {
        write_file(path, &traces_to_csv(&out.traces))?;
    }
    Ok(())
}

fn default_synth_output(input: &Path) -> PathBuf {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    input.with_file_name(format!("{stem}_noisy.png"))
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let output = args
        .output
        .clone()
        .unwrap_or_else(|| default_synth_output(&args.input));
    log::info!(
        "synth {} -> {}: noise {}, seed {}",
        args.input.display(),
        output.display(),
        args.sigma,
        args.seed
    );
    let clean = load_image(&args.input)?;
    let noisy = add_awgn(&clean, &args.sigma, args.seed)?;
    // quantization clips to [0, 255]
    save_image(&noisy, &output)
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    log::info!("bench config: {}", serde_json::to_string(&config)?);
    let report = run_experiment(&config)?;
    print!("{}", report.table_csv());
    Ok(())
}

fn run_prox_curve(args: &ProxCurveArgs) -> Result<()> {
    if args.points < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    if !(args.sigma_max.is_finite() && args.sigma_max > 0.0) {
        return Err(Error::invalid(format!(
            "sigma-max must be positive, got {}",
            args.sigma_max
        )));
    }
    log::info!(
        "prox-curve: t = {}, alphas {:?}, σ ∈ [0, {}] ({} points), rule {:?}",
        args.threshold,
        args.alphas,
        args.sigma_max,
        args.points,
        args.rule
    );
    let step = args.sigma_max / (args.points - 1) as f64;
    let sigmas: Vec<f64> = (0..args.points).map(|i| i as f64 * step).collect();
    let points = export_shrinkage_curve(args.threshold, &args.alphas, &sigmas, args.rule.into())?;
    let csv = shrinkage_csv(&points);
    match &args.output {
        Some(path) => write_file(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    log::info!("estimate-noise {}", args.input.display());
    let image = load_image(&args.input)?;
    let est = estimate_noise_mad(&image)?;
    println!("sigma_r,sigma_g,sigma_b");
    println!("{:.4},{:.4},{:.4}", est.sigma_r, est.sigma_g, est.sigma_b);
    Ok(())
}
