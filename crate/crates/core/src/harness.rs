//! Metrics, baselines and the batch experiment runner.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ColorImage;
use crate::io::{load_image, save_image};
use crate::noise::{add_awgn, estimate_noise_mad, ChannelNoise, RNG_ALGORITHM};
use crate::pipeline::{denoise_with_reference, traces_to_csv, DenoiseParams};
use crate::solver::ProxRule;

/// Value reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 999.0;

/// `10·log₁₀(255² / MSE)` over all samples; `+∞` for identical images.
pub fn psnr(reference: &ColorImage, test: &ColorImage) -> Result<f64> {
    reference.ensure_same_dims(test)?;
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// PSNR as written to reports (capped at [`PSNR_CAP_DB`]).
pub fn report_db(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Channel-wise separable Gaussian blur with symmetric boundary handling
/// and a kernel truncated at 3σ (rounded up).
pub fn gaussian_blur(image: &ColorImage, sigma: f64) -> Result<ColorImage> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!(
            "blur sigma must be positive, got {sigma}"
        )));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = image.dims();
    let mut tmp = ColorImage::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| {
                        k * image.get(r, reflect(c as isize + i as isize - radius, w), ch)
                    })
                    .sum();
                tmp.set(r, c, ch, v);
            }
        }
    }
    let mut out = ColorImage::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp.get(reflect(r as isize + i as isize - radius, h), c, ch))
                    .sum();
                out.set(r, c, ch, v);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkagePoint {
    pub alpha: f64,
    pub sigma: f64,
    pub shrunk: f64,
}

/// Scalar shrinkage `σ ↦ σ̂` at threshold `t` for each α.
pub fn export_shrinkage_curve(
    t: f64,
    alphas: &[f64],
    sigmas: &[f64],
    rule: ProxRule,
) -> Result<Vec<ShrinkagePoint>> {
    let mut out = Vec::with_capacity(alphas.len() * sigmas.len());
    for &alpha in alphas {
        for &sigma in sigmas {
            let shrunk = rule.apply(&[sigma], t, alpha)?[0];
            out.push(ShrinkagePoint {
                alpha,
                sigma,
                shrunk,
            });
        }
    }
    Ok(out)
}

pub fn shrinkage_csv(points: &[ShrinkagePoint]) -> String {
    let mut s = String::from("alpha,sigma,shrunk\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.alpha, p.sigma, p.shrunk);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmitFlags {
    pub denoised_images: bool,
    pub noisy_images: bool,
    pub diagnostics_csv: bool,
    pub report_json: bool,
}

impl Default for EmitFlags {
    fn default() -> Self {
        Self {
            denoised_images: true,
            noisy_images: false,
            diagnostics_csv: false,
            report_json: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub inputs: Vec<PathBuf>,
    /// Known noise levels. Required for synthetic runs; estimated with
    /// [`estimate_noise_mad`] in real-noise mode when absent.
    #[serde(default)]
    pub noise: Option<ChannelNoise>,
    #[serde(default)]
    pub params: DenoiseParams,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit: EmitFlags,
    /// Inputs are already noisy: no synthesis and no ground truth.
    #[serde(default)]
    pub real_noise: bool,
    /// Clip synthesized noisy images to [0, 255] before denoising.
    #[serde(default)]
    pub clip_noisy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub name: String,
    pub psnr_noisy: Option<f64>,
    pub psnr_denoised: Option<f64>,
    pub seconds: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    pub noise: Option<ChannelNoise>,
    /// Noise seed used for this image (`seed + index`).
    pub seed: Option<u64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub images: usize,
    pub psnr_noisy: Option<f64>,
    pub psnr_denoised: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub per_image: Vec<ImageResult>,
    pub average: Average,
    pub version: String,
    pub rng: String,
}

impl ExperimentReport {
    /// Copy with every wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.per_image.iter_mut().for_each(|i| i.seconds = 0.0);
        r.average.seconds = 0.0;
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn table_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
        let mut s = String::from("image,psnr_noisy,psnr_denoised,seconds,iterations\n");
        for r in &self.per_image {
            let _ = writeln!(
                s,
                "{},{},{},{:.2},{}",
                r.name,
                fmt(r.psnr_noisy),
                fmt(r.psnr_denoised),
                r.seconds,
                r.iterations
            );
        }
        let _ = writeln!(
            s,
            "average,{},{},{:.2},",
            fmt(self.average.psnr_noisy),
            fmt(self.average.psnr_denoised),
            self.average.seconds
        );
        s
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_one(config: &ExperimentConfig, index: usize, path: &Path) -> Result<ImageResult> {
    let name = stem(path);
    let t0 = Instant::now();
    let input = load_image(path)?;
    let seed = config.seed.wrapping_add(index as u64);

    let (noisy, noise, reference, seed) = if config.real_noise {
        let noise = match config.noise {
            Some(n) => n,
            None => estimate_noise_mad(&input)?,
        };
        (input, noise, None, None)
    } else {
        let noise = config
            .noise
            .ok_or_else(|| Error::invalid("synthetic experiments need explicit noise levels"))?;
        let mut noisy = add_awgn(&input, &noise, seed)?;
        if config.clip_noisy {
            noisy = noisy.clipped();
        }
        (noisy, noise, Some(input), Some(seed))
    };

    let out = denoise_with_reference(&noisy, &noise, &config.params, reference.as_ref())?;
    let psnr_noisy = reference
        .as_ref()
        .map(|r| psnr(r, &noisy).map(report_db))
        .transpose()?;
    let psnr_denoised = reference
        .as_ref()
        .map(|r| psnr(r, &out.image).map(report_db))
        .transpose()?;

    let dir = &config.output_dir;
    if config.emit.denoised_images {
        save_image(&out.image, &dir.join(format!("{name}_denoised.png")))?;
    }
    if config.emit.noisy_images {
        save_image(&noisy.clipped(), &dir.join(format!("{name}_noisy.png")))?;
    }
    if config.emit.diagnostics_csv {
        write_file(
            &dir.join(format!("{name}_diagnostics.csv")),
            &traces_to_csv(&out.traces),
        )?;
    }
    Ok(ImageResult {
        name,
        psnr_noisy,
        psnr_denoised,
        seconds: t0.elapsed().as_secs_f64(),
        iterations: out.report.iterations.len(),
        noise: Some(noise),
        seed,
        error: None,
    })
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs every input through noise synthesis (unless `real_noise`), denoising
/// and scoring. Per-image failures are recorded and the run continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.params.validate()?;
    if let Some(n) = &config.noise {
        n.validate()?;
    }
    fs::create_dir_all(&config.output_dir).map_err(|source| Error::Io {
        path: config.output_dir.clone(),
        source,
    })?;
    log::info!(
        "experiment: {} inputs, seed {}, params {}",
        config.inputs.len(),
        config.seed,
        serde_json::to_string(&config.params)?
    );

    let mut per_image = Vec::with_capacity(config.inputs.len());
    for (i, path) in config.inputs.iter().enumerate() {
        match run_one(config, i, path) {
            Ok(r) => {
                log::info!(
                    "{}: noisy {:?} dB, denoised {:?} dB",
                    r.name,
                    r.psnr_noisy,
                    r.psnr_denoised
                );
                per_image.push(r);
            }
            // numerical failures are bugs, not bad inputs
            Err(e) if e.is_numerical() => return Err(e),
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                per_image.push(ImageResult {
                    name: stem(path),
                    psnr_noisy: None,
                    psnr_denoised: None,
                    seconds: 0.0,
                    iterations: 0,
                    noise: None,
                    seed: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let ok: Vec<&ImageResult> = per_image.iter().filter(|r| r.error.is_none()).collect();
    let average = Average {
        images: ok.len(),
        psnr_noisy: mean(ok.iter().filter_map(|r| r.psnr_noisy)),
        psnr_denoised: mean(ok.iter().filter_map(|r| r.psnr_denoised)),
        seconds: mean(ok.iter().map(|r| r.seconds)).unwrap_or(0.0),
    };
    let report = ExperimentReport {
        config: config.clone(),
        per_image,
        average,
        version: crate::VERSION.to_string(),
        rng: RNG_ALGORITHM.to_string(),
    };
    if config.emit.report_json {
        write_file(&config.output_dir.join("report.json"), &report.to_json()?)?;
        write_file(&config.output_dir.join("table.csv"), &report.table_csv())?;
    }
    Ok(report)
}
