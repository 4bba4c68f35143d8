//! Channel noise levels, the diagonal channel weight, AWGN synthesis and a
//! robust fallback noise estimator.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ColorImage;

/// Identifier of the generator used by [`add_awgn`], recorded in reports.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), one stream per channel";

/// Per-channel noise standard deviations, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelNoise {
    pub sigma_r: f64,
    pub sigma_g: f64,
    pub sigma_b: f64,
}

impl ChannelNoise {
    pub fn new(sigma_r: f64, sigma_g: f64, sigma_b: f64) -> Result<Self> {
        let noise = Self {
            sigma_r,
            sigma_g,
            sigma_b,
        };
        noise.validate()?;
        Ok(noise)
    }

    pub fn uniform(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma, sigma)
    }

    pub fn from_array(s: [f64; 3]) -> Result<Self> {
        Self::new(s[0], s[1], s[2])
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sigma_r, self.sigma_g, self.sigma_b]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in ["sigma_r", "sigma_g", "sigma_b"]
            .iter()
            .zip(self.as_array())
        {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.sigma_r.min(self.sigma_g).min(self.sigma_b)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.sigma_r * factor,
            self.sigma_g * factor,
            self.sigma_b * factor,
        )
    }
}

impl std::fmt::Display for ChannelNoise {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.sigma_r, self.sigma_g, self.sigma_b)
    }
}

/// The block-diagonal weight `W = diag(σ_r⁻¹ I, σ_g⁻¹ I, σ_b⁻¹ I)` with
/// `p² × p²` identity blocks, stored as three scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMatrix {
    inverse_sigmas: [f64; 3],
    block_size: usize,
}

impl WeightMatrix {
    /// Weight for matrices of `3 · block_size` rows, one block per channel.
    pub fn with_block_size(noise: &ChannelNoise, block_size: usize) -> Result<Self> {
        noise.validate()?;
        if block_size == 0 {
            return Err(Error::invalid("block size must be at least 1"));
        }
        let s = noise.as_array();
        Ok(Self {
            inverse_sigmas: [1.0 / s[0], 1.0 / s[1], 1.0 / s[2]],
            block_size,
        })
    }

    pub fn inverse_sigmas(&self) -> [f64; 3] {
        self.inverse_sigmas
    }

    /// Rows per channel block (`p²`).
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Number of rows of the matrices this weight applies to (`3p²`).
    pub fn rows(&self) -> usize {
        3 * self.block_size
    }

    /// Diagonal entry of `W` for row `i`.
    #[inline]
    pub fn weight(&self, row: usize) -> f64 {
        self.inverse_sigmas[row / self.block_size]
    }

    /// Diagonal entry of `WᵀW` for row `i`.
    #[inline]
    pub fn gram(&self, row: usize) -> f64 {
        let w = self.weight(row);
        w * w
    }

    fn check_rows(&self, m: &DMatrix<f64>) -> Result<()> {
        if m.nrows() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: (self.rows(), m.ncols()),
                got: m.shape(),
            });
        }
        Ok(())
    }

    /// `W·m`.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(m)?;
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.weight(i);
        }
        Ok(out)
    }

    /// `WᵀW·m`.
    pub fn apply_gram(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(m)?;
        let mut out = m.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.gram(i);
        }
        Ok(out)
    }

    /// The explicit `3p² × 3p²` matrix. Only meant for tests and small p.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.rows(), |i, j| {
            if i == j {
                self.weight(i)
            } else {
                0.0
            }
        })
    }
}

pub fn make_weight_matrix(noise: &ChannelNoise, p: usize) -> Result<WeightMatrix> {
    if p == 0 {
        return Err(Error::invalid("patch size must be at least 1"));
    }
    WeightMatrix::with_block_size(noise, p * p)
}

/// Adds independent zero-mean Gaussian noise with the given per-channel
/// standard deviations. The result is not clipped.
pub fn add_awgn(image: &ColorImage, noise: &ChannelNoise, seed: u64) -> Result<ColorImage> {
    noise.validate()?;
    let mut out = image.clone();
    let sigmas = noise.as_array();
    for (ch, sigma) in sigmas.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ch as u64);
        for v in out.data_mut().iter_mut().skip(ch).step_by(3) {
            let n: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * n;
        }
    }
    Ok(out)
}

const MAD_TO_SIGMA: f64 = 0.6745;
// Kernel [[1,-2,1],[-2,4,-2],[1,-2,1]]; its L2 norm is 6.
const LAPLACIAN: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
const LAPLACIAN_GAIN: f64 = 6.0;
const MIN_ESTIMATE: f64 = 1e-3;

/// Approximate per-channel noise level from the median absolute value of a
/// 3×3 Laplacian high-pass residual.
///
/// Texture and edges leak into the residual, so on natural images this tends
/// to over-estimate weak noise. Estimates are clamped below at `1e-3`.
pub fn estimate_noise_mad(image: &ColorImage) -> Result<ChannelNoise> {
    let (h, w) = image.dims();
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "noise estimation needs at least 16x16 pixels, got {h}x{w}"
        )));
    }
    let mut est = [0.0; 3];
    for (ch, e) in est.iter_mut().enumerate() {
        let mut residual = Vec::with_capacity((h - 2) * (w - 2));
        for r in 1..h - 1 {
            for c in 1..w - 1 {
                let mut acc = 0.0;
                for (dr, krow) in LAPLACIAN.iter().enumerate() {
                    for (dc, k) in krow.iter().enumerate() {
                        acc += k * image.get(r + dr - 1, c + dc - 1, ch);
                    }
                }
                residual.push(acc.abs());
            }
        }
        let med = median(&mut residual);
        *e = (med / MAD_TO_SIGMA / LAPLACIAN_GAIN).max(MIN_ESTIMATE);
    }
    ChannelNoise::from_array(est)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
