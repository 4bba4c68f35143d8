//! ADMM solver for
//!
//! ```text
//! min_X ‖W(Y − X)‖_F² + λ(‖X‖_* − α‖X‖_F)
//! ```
//!
//! split as `X = Z` with multiplier `A` and an increasing penalty `ρ`.
//! The X-step is a per-row closed form because `W` is diagonal; the Z-step
//! shrinks the singular values of `X + A/ρ`.

mod prox;

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::WeightMatrix;

pub use self::prox::{
    prox_l1_minus_alpha_l2, prox_l1_minus_alpha_l2_thresholded, prox_objective, ProxRule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Regularization weight λ.
    pub lambda: f64,
    /// Frobenius coefficient α.
    pub alpha: f64,
    /// Initial penalty ρ₀.
    pub rho0: f64,
    /// Penalty growth factor μ (> 1).
    pub mu: f64,
    /// Stopping tolerance τ.
    pub tau: f64,
    /// Iteration budget K₁.
    pub max_iters: usize,
    pub prox_rule: ProxRule,
    /// Evaluate the objective (one extra SVD) every iteration.
    pub record_objective: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            lambda: 0.86,
            alpha: 1.9,
            rho0: 0.86,
            mu: 1.001,
            tau: 1e-7,
            max_iters: 10,
            prox_rule: ProxRule::Thresholded,
            record_objective: false,
        }
    }
}

impl SolverParams {
    /// Settings tuned for real camera noise.
    pub fn real_noise() -> Self {
        Self {
            lambda: 4.86,
            alpha: 1.05,
            rho0: 4.55,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("rho0", self.rho0),
            ("tau", self.tau),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(self.mu.is_finite() && self.mu > 1.0) {
            return Err(Error::invalid(format!("mu must exceed 1, got {}", self.mu)));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// ADMM iterates after `k` full iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub rho: f64,
    pub k: usize,
}

impl SolverState {
    pub fn zeros(rows: usize, cols: usize, rho0: f64) -> Self {
        Self {
            x: DMatrix::zeros(rows, cols),
            z: DMatrix::zeros(rows, cols),
            a: DMatrix::zeros(rows, cols),
            rho: rho0,
            k: 0,
        }
    }
}

/// One row of the convergence trace, recorded after iteration `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// ‖X_k − Z_k‖_F
    pub primal_residual: f64,
    /// ‖X_k − X_{k−1}‖_F
    pub x_change: f64,
    /// ‖Z_k − Z_{k−1}‖_F
    pub z_change: f64,
    /// ‖A_k‖_F
    pub multiplier_norm: f64,
    /// Penalty used during iteration `k`.
    pub rho: f64,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub records: Vec<IterationRecord>,
    /// Stopped by the tolerance test rather than the budget.
    pub converged: bool,
}

impl Diagnostics {
    pub const CSV_HEADER: &'static str =
        "k,primal_residual,x_change,z_change,multiplier_norm,rho,objective";

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn csv_rows(&self, prefix: &str, out: &mut String) {
        for r in &self.records {
            let obj = r.objective.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{prefix}{},{:e},{:e},{:e},{:e},{:e},{obj}",
                r.k, r.primal_residual, r.x_change, r.z_change, r.multiplier_norm, r.rho
            );
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        self.csv_rows("", &mut out);
        out
    }
}

fn ensure_shape(m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::DimensionMismatch {
            expected: shape,
            got: m.shape(),
        });
    }
    Ok(())
}

fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    m.clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .map(|svd| svd.singular_values.as_slice().to_vec())
        .ok_or_else(|| svd_failure(m, 0))
}

fn svd_failure(m: &DMatrix<f64>, iteration: usize) -> Error {
    Error::Numerical {
        iteration,
        message: format!(
            "SVD did not converge on a {}x{} matrix (‖·‖_F = {:e}, max |entry| = {:e})",
            m.nrows(),
            m.ncols(),
            m.norm(),
            m.amax()
        ),
    }
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// `‖W(Y − X)‖_F² + λ(‖X‖_* − α‖X‖_F)`.
pub fn objective(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    w: &WeightMatrix,
    lambda: f64,
    alpha: f64,
) -> Result<f64> {
    ensure_shape(x, y.shape())?;
    let fit = w.apply(&(y - x))?.norm_squared();
    Ok(fit + lambda * (nuclear_norm(x)? - alpha * x.norm()))
}

/// Closed-form minimizer of `‖W(Y − X)‖_F² + (ρ/2)‖X − Z + A/ρ‖_F²`:
/// row `i` is `(wᵢ²Yᵢ + (ρ/2)Zᵢ − Aᵢ/2) / (wᵢ² + ρ/2)`.
pub fn x_update(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: f64,
    w: &WeightMatrix,
) -> Result<DMatrix<f64>> {
    ensure_shape(z, y.shape())?;
    ensure_shape(a, y.shape())?;
    if y.nrows() != w.rows() {
        return Err(Error::DimensionMismatch {
            expected: (w.rows(), y.ncols()),
            got: y.shape(),
        });
    }
    let half_rho = 0.5 * rho;
    let (rows, cols) = y.shape();
    let mut x = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        let g = w.gram(i);
        let inv = 1.0 / (g + half_rho);
        for j in 0..cols {
            x[(i, j)] = (g * y[(i, j)] + half_rho * z[(i, j)] - 0.5 * a[(i, j)]) * inv;
        }
    }
    Ok(x)
}

/// `U·diag(prox(σ, λ/ρ, α))·Vᵀ` where `X + A/ρ = U·diag(σ)·Vᵀ`.
pub fn z_update(
    x: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: f64,
    lambda: f64,
    alpha: f64,
    rule: ProxRule,
) -> Result<DMatrix<f64>> {
    ensure_shape(a, x.shape())?;
    let q = x + a / rho;
    shrink_singular_values(&q, lambda / rho, alpha, rule, 0)
}

fn shrink_singular_values(
    q: &DMatrix<f64>,
    t: f64,
    alpha: f64,
    rule: ProxRule,
    iteration: usize,
) -> Result<DMatrix<f64>> {
    let (rows, cols) = q.shape();
    if q.is_empty() {
        return Ok(q.clone());
    }
    let svd = q
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| svd_failure(q, iteration))?;
    let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Err(svd_failure(q, iteration));
    };
    let sv = svd.singular_values.as_slice();
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]).then(i.cmp(&j)));
    let sorted: Vec<f64> = order.iter().map(|&i| sv[i].max(0.0)).collect();
    let shrunk = rule.apply(&sorted, t, alpha)?;

    let mut z = DMatrix::zeros(rows, cols);
    for (&i, &s) in order.iter().zip(&shrunk) {
        if s != 0.0 {
            z.ger(s, &u.column(i), &v_t.row(i).transpose(), 1.0);
        }
    }
    Ok(z)
}

/// `A + ρ(X − Z)`.
pub fn a_update(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    rho: f64,
) -> Result<DMatrix<f64>> {
    ensure_shape(x, a.shape())?;
    ensure_shape(z, a.shape())?;
    Ok(a + (x - z) * rho)
}

/// The three residuals `‖X−Z‖_F`, `‖X−X_prev‖_F`, `‖Z−Z_prev‖_F`.
pub fn residuals(state: &SolverState, prev: &SolverState) -> (f64, f64, f64) {
    (
        (&state.x - &state.z).norm(),
        (&state.x - &prev.x).norm(),
        (&state.z - &prev.z).norm(),
    )
}

/// True when all three residuals are at most `tau`.
pub fn stopping_check(state: &SolverState, prev: &SolverState, tau: f64) -> bool {
    let (a, b, c) = residuals(state, prev);
    a <= tau && b <= tau && c <= tau
}

fn check_finite(m: &DMatrix<f64>, name: &str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical {
            iteration,
            message: format!("non-finite entry in {name}"),
        })
    }
}

/// One ADMM iteration: X, Z, A updates followed by `ρ ← μρ`.
pub fn step(
    state: &SolverState,
    y: &DMatrix<f64>,
    w: &WeightMatrix,
    params: &SolverParams,
) -> Result<SolverState> {
    let k = state.k + 1;
    let rho = state.rho;
    let x = x_update(y, &state.z, &state.a, rho, w)?;
    check_finite(&x, "X", k)?;
    let q = &x + &state.a / rho;
    let z = shrink_singular_values(&q, params.lambda / rho, params.alpha, params.prox_rule, k)?;
    check_finite(&z, "Z", k)?;
    let a = a_update(&state.a, &x, &z, rho)?;
    check_finite(&a, "A", k)?;

    // ‖A_k‖_F ≤ λ√n whenever every singular value moves by at most λ/ρ,
    // which the shrinkage guarantees for α ≤ 2.
    let bound = params.lambda * (y.nrows().min(y.ncols()) as f64).sqrt();
    let slack = 1e-9 + 1e-12 * rho * q.norm();
    let a_norm = a.norm();
    if a_norm > bound + slack {
        if params.alpha <= 2.0 {
            return Err(Error::Numerical {
                iteration: k,
                message: format!("multiplier norm {a_norm:e} exceeds the bound {bound:e}"),
            });
        }
        log::warn!("iteration {k}: ‖A‖_F = {a_norm:e} exceeds λ√n = {bound:e} (α > 2)");
    }

    Ok(SolverState {
        x,
        z,
        a,
        rho: rho * params.mu,
        k,
    })
}

/// Runs ADMM from `X = Z = A = 0`, `ρ = ρ₀` until the stopping test passes or
/// `max_iters` iterations are spent, and returns the final `Z`.
pub fn solve(
    y: &DMatrix<f64>,
    w: &WeightMatrix,
    params: &SolverParams,
) -> Result<(DMatrix<f64>, Diagnostics)> {
    params.validate()?;
    check_finite(y, "Y", 0)?;
    if y.nrows() != w.rows() {
        return Err(Error::DimensionMismatch {
            expected: (w.rows(), y.ncols()),
            got: y.shape(),
        });
    }
    let (rows, cols) = y.shape();
    let mut state = SolverState::zeros(rows, cols, params.rho0);
    let mut diag = Diagnostics::default();
    loop {
        let next = step(&state, y, w, params)?;
        let (primal, dx, dz) = residuals(&next, &state);
        let objective = if params.record_objective {
            Some(objective(y, &next.x, w, params.lambda, params.alpha)?)
        } else {
            None
        };
        diag.records.push(IterationRecord {
            k: next.k,
            primal_residual: primal,
            x_change: dx,
            z_change: dz,
            multiplier_norm: next.a.norm(),
            rho: state.rho,
            objective,
        });
        let done = primal <= params.tau && dx <= params.tau && dz <= params.tau;
        state = next;
        if done {
            diag.converged = true;
            break;
        }
        if state.k >= params.max_iters {
            break;
        }
    }
    Ok((state.z, diag))
}
