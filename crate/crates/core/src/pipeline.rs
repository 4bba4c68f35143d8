//! Image-level denoising: repeated passes of key-patch grouping, per-group
//! MC-NNFNM solves and aggregation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{psnr, report_db};
use crate::image::ColorImage;
use crate::noise::{make_weight_matrix, ChannelNoise, WeightMatrix, RNG_ALGORITHM};
use crate::patch::{
    block_match, extract_key_patches, form_patch_matrix, Accumulator, PatchCoord, PatchMatrix,
};
use crate::solver::{solve, Diagnostics, SolverParams};

/// How noise levels evolve across outer iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaUpdate {
    #[default]
    Fixed,
    /// Re-estimate from the residual between the noisy input and the current
    /// iterate, see [`sigma_residual_update`].
    Residual,
}

/// Which image the patch-matrix samples are read from. Block matching
/// always runs on the current iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupSource {
    /// The noisy input; later passes only refine which patches are grouped.
    #[default]
    Noisy,
    /// The current iterate, so each pass denoises the previous output.
    Iterate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiseParams {
    pub patch_size: usize,
    pub stride: usize,
    /// Side of the square block-matching window.
    pub window: usize,
    /// Patches per group (M).
    pub group_size: usize,
    /// Outer iterations (K₂).
    pub outer_iters: usize,
    pub solver: SolverParams,
    pub sigma_update: SigmaUpdate,
    /// Factor applied by the residual σ update.
    pub residual_scale: f64,
    /// Intensities and σ are divided by this before a group is solved.
    pub working_scale: f64,
    /// Rescale the channel weights so the least noisy channel has weight 1.
    pub normalize_weights: bool,
    /// Subtract each group's row means before solving and add them back after.
    pub center_groups: bool,
    pub group_source: GroupSource,
    /// Keep the ADMM trace of every group (costly; enables objective logging).
    pub record_diagnostics: bool,
}

impl Default for DenoiseParams {
    fn default() -> Self {
        Self {
            patch_size: 6,
            stride: 4,
            window: 20,
            group_size: 60,
            outer_iters: 5,
            solver: SolverParams::default(),
            sigma_update: SigmaUpdate::Fixed,
            residual_scale: 1.0,
            working_scale: 255.0,
            normalize_weights: true,
            center_groups: true,
            group_source: GroupSource::Noisy,
            record_diagnostics: false,
        }
    }
}

impl DenoiseParams {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.patch_size == 0 {
            return Err(Error::invalid("patch size must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        if self.window < self.patch_size {
            return Err(Error::invalid(format!(
                "search window {} is smaller than the patch size {}",
                self.window, self.patch_size
            )));
        }
        if self.group_size == 0 {
            return Err(Error::invalid("group size must be at least 1"));
        }
        if self.outer_iters == 0 {
            return Err(Error::invalid("outer iterations must be at least 1"));
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return Err(Error::invalid(format!(
                "residual scale must lie in (0, 1], got {}",
                self.residual_scale
            )));
        }
        if !(self.working_scale.is_finite() && self.working_scale > 0.0) {
            return Err(Error::invalid(format!(
                "working scale must be positive, got {}",
                self.working_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iteration: usize,
    pub sigma: ChannelNoise,
    pub groups: usize,
    /// Mean ADMM iterations per group.
    pub mean_admm_iterations: f64,
    /// PSNR of the clipped iterate against the reference, when one was given.
    pub psnr: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub version: String,
    pub params: DenoiseParams,
    pub noise: ChannelNoise,
    pub height: usize,
    pub width: usize,
    /// Key patches per outer iteration (N).
    pub groups: usize,
    pub iterations: Vec<OuterIteration>,
    pub seconds: f64,
    /// Seed of the noise synthesis that produced the input, if any.
    pub seed: Option<u64>,
    pub rng: String,
}

/// ADMM trace of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupTrace {
    pub outer: usize,
    pub group: usize,
    pub key: PatchCoord,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    /// Final estimate clipped to [0, 255].
    pub image: ColorImage,
    pub report: DenoiseReport,
    /// Empty unless `record_diagnostics` is set.
    pub traces: Vec<GroupTrace>,
}

pub const TRACE_CSV_HEADER: &str =
    "outer,group,key_row,key_col,k,primal_residual,x_change,z_change,multiplier_norm,rho,objective";

pub fn traces_to_csv(traces: &[GroupTrace]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for t in traces {
        let prefix = format!("{},{},{},{},", t.outer, t.group, t.key.row, t.key.col);
        t.diagnostics.csv_rows(&prefix, &mut out);
    }
    out
}

/// `σ'_c = scale · sqrt(max(σ_c² − mean((y_c − x_c)²), 1e-6))`.
pub fn sigma_residual_update(
    noise: &ChannelNoise,
    noisy_original: &ColorImage,
    current: &ColorImage,
    scale: f64,
) -> Result<ChannelNoise> {
    noisy_original.ensure_same_dims(current)?;
    const EPS: f64 = 1e-6;
    let n = (noisy_original.height() * noisy_original.width()) as f64;
    let mut mse = [0.0; 3];
    for (i, (a, b)) in noisy_original.data().iter().zip(current.data()).enumerate() {
        mse[i % 3] += (a - b).powi(2);
    }
    let s = noise.as_array();
    ChannelNoise::from_array(std::array::from_fn(|c| {
        scale * (s[c] * s[c] - mse[c] / n).max(EPS).sqrt()
    }))
}

/// Denoises with fixed inputs; see [`denoise_with_reference`].
pub fn denoise(
    noisy: &ColorImage,
    noise: &ChannelNoise,
    params: &DenoiseParams,
) -> Result<DenoiseOutput> {
    denoise_with_reference(noisy, noise, params, None)
}

/// Runs `outer_iters` passes. Pass `k` block-matches on the previous
/// estimate, solves every group and averages the results into the next
/// estimate. When `reference` is given the PSNR of every pass is reported.
pub fn denoise_with_reference(
    noisy: &ColorImage,
    noise: &ChannelNoise,
    params: &DenoiseParams,
    reference: Option<&ColorImage>,
) -> Result<DenoiseOutput> {
    params.validate()?;
    noise.validate()?;
    let (h, w) = noisy.dims();
    let p = params.patch_size;
    if p > h.min(w) {
        return Err(Error::invalid(format!(
            "patch size {p} exceeds the image size {h}x{w}"
        )));
    }
    if let Some(r) = reference {
        r.ensure_same_dims(noisy)?;
    }
    let start = Instant::now();
    let mut solver = params.solver;
    solver.record_objective |= params.record_diagnostics;

    let mut estimate = noisy.clone();
    let mut sigma = *noise;
    let mut iterations = Vec::with_capacity(params.outer_iters);
    let mut traces = Vec::new();
    let mut groups = 0;

    for outer in 1..=params.outer_iters {
        let t0 = Instant::now();
        if outer > 1 && params.sigma_update == SigmaUpdate::Residual {
            sigma = sigma_residual_update(noise, noisy, &estimate, params.residual_scale)?;
        }
        let weight = solver_weight(&sigma, params)?;
        let guide = &estimate;
        let source = match params.group_source {
            GroupSource::Noisy => noisy,
            GroupSource::Iterate => &estimate,
        };
        let keys = extract_key_patches(guide, p, params.stride)?;
        groups = keys.len();

        let mut acc = Accumulator::new(h, w);
        let mut admm_iters = 0usize;
        // bounded memory; chunk results are merged in key order
        for (chunk_idx, chunk) in keys.chunks(256).enumerate() {
            let solved: Vec<Result<(PatchMatrix, Diagnostics)>> = chunk
                .par_iter()
                .map(|&key| denoise_group(guide, source, key, &weight, &solver, params))
                .collect();
            for (i, r) in solved.into_iter().enumerate() {
                let (group, diag) = r?;
                acc.add(&group)?;
                admm_iters += diag.iterations();
                if params.record_diagnostics {
                    traces.push(GroupTrace {
                        outer,
                        group: chunk_idx * 256 + i,
                        key: group.key(),
                        diagnostics: diag,
                    });
                }
            }
        }
        estimate = acc.finish()?;

        let psnr_db =
            reference.map(|r| report_db(psnr(r, &estimate.clipped()).unwrap_or(f64::NAN)));
        let seconds = t0.elapsed().as_secs_f64();
        log::info!(
            "outer iteration {outer}/{}: {groups} groups, σ = {sigma}{}, {seconds:.2}s",
            params.outer_iters,
            psnr_db
                .map(|v| format!(", PSNR {v:.3} dB"))
                .unwrap_or_default()
        );
        iterations.push(OuterIteration {
            iteration: outer,
            sigma,
            groups,
            mean_admm_iterations: admm_iters as f64 / groups as f64,
            psnr: psnr_db,
            seconds,
        });
    }

    let report = DenoiseReport {
        version: crate::VERSION.to_string(),
        params: params.clone(),
        noise: *noise,
        height: h,
        width: w,
        groups,
        iterations,
        seconds: start.elapsed().as_secs_f64(),
        seed: None,
        rng: RNG_ALGORITHM.to_string(),
    };
    Ok(DenoiseOutput {
        image: estimate.clipped(),
        report,
        traces,
    })
}

fn solver_weight(sigma: &ChannelNoise, params: &DenoiseParams) -> Result<WeightMatrix> {
    let working = if params.normalize_weights {
        sigma.scaled(1.0 / sigma.min())?
    } else {
        sigma.scaled(1.0 / params.working_scale)?
    };
    make_weight_matrix(&working, params.patch_size)
}

fn denoise_group(
    guide: &ColorImage,
    source: &ColorImage,
    key: PatchCoord,
    weight: &WeightMatrix,
    solver: &SolverParams,
    params: &DenoiseParams,
) -> Result<(PatchMatrix, Diagnostics)> {
    let p = params.patch_size;
    let coords = block_match(guide, key, p, params.window, params.group_size)?;
    let mut group = form_patch_matrix(source, &coords, p)?;
    let scale = params.working_scale;
    let mut y = &group.data / scale;
    let means = if params.center_groups {
        let means = y.column_mean();
        for mut col in y.column_iter_mut() {
            col -= &means;
        }
        Some(means)
    } else {
        None
    };
    let (mut x, diag) = solve(&y, weight, solver).map_err(|e| Error::Group {
        row: key.row,
        col: key.col,
        source: Box::new(e),
    })?;
    if let Some(means) = means {
        for mut col in x.column_iter_mut() {
            col += &means;
        }
    }
    group.data = x * scale;
    Ok((group, diag))
}
