//! Color image denoising by multi-channel "nuclear norm minus Frobenius norm"
//! minimization (MC-NNFNM).
//!
//! The crate is organised bottom-up:
//!
//! - [`noise`]: per-channel noise levels, the diagonal channel weight, AWGN
//!   synthesis and a MAD noise estimator.
//! - [`patch`]: key-patch grid, block matching, patch matrices and aggregation.
//! - [`solver`]: the ADMM solver with its closed-form X-step and the
//!   L1 − αL2 singular-value proximal Z-step.
//! - [`pipeline`]: the outer denoising loop over patch groups.
//! - [`harness`]: PSNR, baselines, shrinkage curves and batch experiments.
//! - [`io`] and [`cli`]: image files and the `nnfn` command line.

pub mod cli;
pub mod error;
pub mod harness;
pub mod image;
pub mod io;
pub mod noise;
pub mod patch;
pub mod pipeline;
pub mod solver;

pub use crate::error::{Error, Result};
pub use crate::image::ColorImage;
pub use crate::noise::{ChannelNoise, WeightMatrix};
pub use crate::patch::{PatchCoord, PatchMatrix};
pub use crate::pipeline::{denoise, DenoiseParams, DenoiseReport, GroupSource, SigmaUpdate};
pub use crate::solver::{solve, ProxRule, SolverParams};

/// Version string recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
