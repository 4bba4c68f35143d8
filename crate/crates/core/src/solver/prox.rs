//! Proximal maps of `t·(‖x‖₁ − α‖x‖₂)` on non-negative, non-increasing
//! vectors (singular values).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which L1 − αL2 shrinkage the Z-step applies to singular values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxRule {
    /// Closed form with a hard zero below the threshold: everything vanishes
    /// when `σ₁ < t`. This is the rule the denoiser is tuned with.
    #[default]
    Thresholded,
    /// The global minimizer, [`prox_l1_minus_alpha_l2`].
    Exact,
}

impl ProxRule {
    pub fn apply(self, sigma: &[f64], t: f64, alpha: f64) -> Result<Vec<f64>> {
        match self {
            ProxRule::Thresholded => prox_l1_minus_alpha_l2_thresholded(sigma, t, alpha),
            ProxRule::Exact => prox_l1_minus_alpha_l2(sigma, t, alpha),
        }
    }
}

fn validate(sigma: &[f64], t: f64, alpha: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid(format!(
            "threshold must be positive, got {t}"
        )));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!(
            "alpha must be non-negative, got {alpha}"
        )));
    }
    if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::invalid(format!(
            "singular values must be finite and non-negative (entry {i} is {})",
            sigma[i]
        )));
    }
    if let Some(i) = sigma.windows(2).position(|w| w[0] < w[1]) {
        return Err(Error::invalid(format!(
            "singular values must be non-increasing (entries {i} and {})",
            i + 1
        )));
    }
    Ok(())
}

/// Soft-threshold `σ` by `t`, then stretch the survivors by `(‖z‖ + αt)/‖z‖`.
/// `None` when every entry is thresholded away.
fn inflate_soft_threshold(sigma: &[f64], t: f64, alpha: f64) -> Option<Vec<f64>> {
    let z: Vec<f64> = sigma.iter().map(|s| (s - t).max(0.0)).collect();
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        let scale = (norm + alpha * t) / norm;
        Some(z.into_iter().map(|v| v * scale).collect())
    } else {
        None
    }
}

fn one_sparse(len: usize, value: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if let Some(first) = out.first_mut() {
        *first = value;
    }
    out
}

/// `argmin_x ½‖x − σ‖² + t(‖x‖₁ − α‖x‖₂)` for sorted non-negative `σ`.
///
/// - `σ₁ > t`: soft-threshold then inflate by `(‖z‖ + αt)/‖z‖`.
/// - `(1 − α)t < σ₁ ≤ t`: a single non-zero, `σ₁ + (α − 1)t`, on the first entry.
/// - otherwise zero.
pub fn prox_l1_minus_alpha_l2(sigma: &[f64], t: f64, alpha: f64) -> Result<Vec<f64>> {
    validate(sigma, t, alpha)?;
    let Some(&s1) = sigma.first() else {
        return Ok(Vec::new());
    };
    if s1 > t {
        if let Some(v) = inflate_soft_threshold(sigma, t, alpha) {
            return Ok(v);
        }
    }
    if s1 > (1.0 - alpha) * t {
        Ok(one_sparse(sigma.len(), s1 + (alpha - 1.0) * t))
    } else {
        Ok(vec![0.0; sigma.len()])
    }
}

/// Closed-form shrinkage with a hard zero when `σ₁ < t`.
///
/// For `σ₁ ≥ t` it agrees with [`prox_l1_minus_alpha_l2`]; when every entry
/// equals `t` exactly (so the soft-thresholded vector is zero) the mass `α·t`
/// goes to the first entry.
pub fn prox_l1_minus_alpha_l2_thresholded(sigma: &[f64], t: f64, alpha: f64) -> Result<Vec<f64>> {
    validate(sigma, t, alpha)?;
    let Some(&s1) = sigma.first() else {
        return Ok(Vec::new());
    };
    if s1 < t {
        return Ok(vec![0.0; sigma.len()]);
    }
    Ok(inflate_soft_threshold(sigma, t, alpha)
        .unwrap_or_else(|| one_sparse(sigma.len(), alpha * t)))
}

/// `½‖x − σ‖² + t(‖x‖₁ − α‖x‖₂)`.
pub fn prox_objective(x: &[f64], sigma: &[f64], t: f64, alpha: f64) -> f64 {
    let fit: f64 = x.iter().zip(sigma).map(|(a, b)| (a - b).powi(2)).sum();
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    let l2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    0.5 * fit + t * (l1 - alpha * l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn below_threshold_vanishes() {
        for alpha in [0.0, 0.5, 1.0, 1.9, 3.0] {
            let out = prox_l1_minus_alpha_l2_thresholded(&[0.5, 0.2], 1.0, alpha).unwrap();
            assert_eq!(out, vec![0.0, 0.0]);
        }
        // the exact map agrees while σ₁ ≤ (1 − α)t
        for alpha in [0.0, 0.25, 0.5] {
            let out = prox_l1_minus_alpha_l2(&[0.5, 0.2], 1.0, alpha).unwrap();
            assert_eq!(out, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn exact_map_keeps_one_entry_below_threshold() {
        let out = prox_l1_minus_alpha_l2(&[0.5, 0.2], 1.0, 1.9).unwrap();
        assert_relative_eq!(out[0], 1.4, epsilon = 1e-15);
        assert_eq!(out[1], 0.0);
        let g = |x: &[f64]| prox_objective(x, &[0.5, 0.2], 1.0, 1.9);
        assert!(g(&out) < g(&[0.0, 0.0]));
    }

    #[test]
    fn alpha_zero_is_soft_thresholding() {
        for rule in [ProxRule::Thresholded, ProxRule::Exact] {
            assert_eq!(rule.apply(&[5.0, 3.0], 1.0, 0.0).unwrap(), vec![4.0, 2.0]);
        }
    }

    #[test]
    fn inflation_factor() {
        let out = prox_l1_minus_alpha_l2(&[5.0, 3.0], 1.0, 1.0).unwrap();
        let f = (20f64.sqrt() + 1.0) / 20f64.sqrt();
        assert_relative_eq!(out[0], 4.0 * f, epsilon = 1e-14);
        assert_relative_eq!(out[1], 2.0 * f, epsilon = 1e-14);
        assert_relative_eq!(out[0], 4.894427190999916, epsilon = 1e-12);
        assert_relative_eq!(out[1], 2.447213595499958, epsilon = 1e-12);
    }

    #[test]
    fn inflation_matches_dense_grid_minimum() {
        // brute-force ½‖x−σ‖² + (‖x‖₁ − ‖x‖₂) over a grid around the answer
        let sigma = [5.0, 3.0];
        let out = prox_l1_minus_alpha_l2(&sigma, 1.0, 1.0).unwrap();
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        let n = 800;
        for i in 0..=n {
            for j in 0..=n {
                let x = [i as f64 * 8.0 / n as f64, j as f64 * 8.0 / n as f64];
                let g = prox_objective(&x, &sigma, 1.0, 1.0);
                if g < best.0 {
                    best = (g, x);
                }
            }
        }
        assert!((best.1[0] - out[0]).abs() <= 0.011);
        assert!((best.1[1] - out[1]).abs() <= 0.011);
        assert!(prox_objective(&out, &sigma, 1.0, 1.0) <= best.0 + 1e-12);
    }

    #[test]
    fn all_entries_at_threshold() {
        let out = prox_l1_minus_alpha_l2_thresholded(&[2.0, 2.0, 2.0], 2.0, 1.5).unwrap();
        assert_eq!(out, vec![3.0, 0.0, 0.0]);
        let out = prox_l1_minus_alpha_l2(&[2.0, 2.0, 2.0], 2.0, 1.5).unwrap();
        assert_eq!(out, vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_input() {
        assert!(prox_l1_minus_alpha_l2(&[], 1.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(prox_l1_minus_alpha_l2(&[1.0, 2.0], 1.0, 1.0).is_err());
        assert!(prox_l1_minus_alpha_l2(&[1.0, -0.5], 1.0, 1.0).is_err());
        assert!(prox_l1_minus_alpha_l2(&[1.0], 0.0, 1.0).is_err());
        assert!(prox_l1_minus_alpha_l2(&[1.0], 1.0, -1.0).is_err());
        assert!(prox_l1_minus_alpha_l2_thresholded(&[f64::NAN], 1.0, 1.0).is_err());
    }

    fn sorted_sigma() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 1..8).prop_map(|mut v| {
            v.sort_by(|a, b| b.total_cmp(a));
            v
        })
    }

    proptest! {
        #[test]
        fn output_is_sorted_and_non_negative(
            sigma in sorted_sigma(), t in 0.01f64..5.0, alpha in 0.0f64..3.0,
        ) {
            for rule in [ProxRule::Thresholded, ProxRule::Exact] {
                let out = rule.apply(&sigma, t, alpha).unwrap();
                prop_assert!(out.iter().all(|&v| v >= 0.0));
                prop_assert!(out.windows(2).all(|w| w[0] >= w[1]));
            }
        }

        #[test]
        fn shrinkage_is_at_most_threshold(
            sigma in sorted_sigma(), t in 0.01f64..5.0, alpha in 0.0f64..=2.0,
        ) {
            for rule in [ProxRule::Thresholded, ProxRule::Exact] {
                let out = rule.apply(&sigma, t, alpha).unwrap();
                for (s, h) in sigma.iter().zip(&out) {
                    prop_assert!((s - h).abs() <= t + 1e-12, "{s} -> {h} (t={t}, α={alpha})");
                }
            }
        }
    }
}
