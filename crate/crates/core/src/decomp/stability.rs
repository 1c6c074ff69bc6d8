//! Rank stability probes.
//!
//! A rank-deficient `N×s` matrix `Y` reaches full rank under
//! `Δ₀ = x₀ [I; 0]` for all but finitely many `x₀`, because
//! `det(Y_s + x I)` (with `Y_s` the first `s` rows) is a nonzero polynomial.
//! Conversely a full-rank `Y` keeps its rank under any perturbation smaller
//! than its least singular value.

use crate::error::{Error, Result};
use crate::linalg::{numeric_rank, singular_values, DEFAULT_RANK_TOL};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of halvings tried by [`perturb_to_full_rank`] (candidates `k = 0..=40`).
pub const SCAN_STEPS: usize = 40;

#[derive(Clone, Debug)]
pub struct PerturbationProbe<T> {
    pub target: Tensor<T>,
    pub epsilon: f64,
    pub delta: Tensor<T>,
    pub achieved_rank: usize,
}

impl<T: Scalar> PerturbationProbe<T> {
    pub fn perturbed(&self) -> Tensor<T> {
        self.target.add(&self.delta).expect("delta mirrors target")
    }
}

fn identity_block<T: Scalar>(n: usize, s: usize, x: T) -> Tensor<T> {
    let mut d = Tensor::zeros(&[n, s]);
    for i in 0..s {
        d.set(i, i, x);
    }
    d
}

/// Finds `Δ = x₀ [I; 0]` with `‖Δ‖_F < ε` making `y + Δ` full column rank.
///
/// Scans `x₀ = ε / (2√s · 2^k)` for `k = 0..=40`; an exhausted scan is
/// reported as [`Error::ProbeFailure`].
pub fn perturb_to_full_rank<T: Scalar>(y: &Tensor<T>, epsilon: f64) -> Result<PerturbationProbe<T>> {
    let (n, s) = y.expect_matrix("perturb_to_full_rank")?;
    if n < s {
        return Err(Error::Precondition(format!("need N ≥ s, got {n}×{s}")));
    }
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::Precondition(format!("epsilon must be positive, got {epsilon}")));
    }
    let rank = numeric_rank(y, DEFAULT_RANK_TOL)?;
    if rank == s {
        return Ok(PerturbationProbe {
            target: y.clone(),
            epsilon,
            delta: Tensor::zeros(&[n, s]),
            achieved_rank: s,
        });
    }
    let mut best = rank;
    let base = epsilon / (2.0 * (s as f64).sqrt());
    for k in 0..=SCAN_STEPS {
        let x0 = T::of(base / 2f64.powi(k as i32));
        let delta = identity_block(n, s, x0);
        let r = numeric_rank(&y.add(&delta)?, DEFAULT_RANK_TOL)?;
        if r == s {
            return Ok(PerturbationProbe {
                target: y.clone(),
                epsilon,
                delta,
                achieved_rank: r,
            });
        }
        best = best.max(r);
    }
    Err(Error::ProbeFailure {
        attempts: SCAN_STEPS + 1,
        best_rank: best,
        target: s,
    })
}

/// Fraction of random perturbations with `‖Δ‖_F < ε` that keep `y_full` at rank `s`.
pub fn rank_stability_trial<T: Scalar>(
    y_full: &Tensor<T>,
    epsilon: f64,
    trials: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let (n, s) = y_full.expect_matrix("rank_stability_trial")?;
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::Precondition(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let rank = numeric_rank(y_full, DEFAULT_RANK_TOL)?;
    if n < s || rank != s {
        return Err(Error::Precondition(format!(
            "input must have full column rank {s}, detected {rank}"
        )));
    }
    if trials == 0 {
        return Ok(1.0);
    }
    let mut kept = 0usize;
    for _ in 0..trials {
        let dir = Tensor::<T>::normal(&[n, s], rng);
        let norm = dir.frobenius_norm();
        let radius: T = rng.uniform(0.0, epsilon);
        let delta = if norm > T::zero() {
            dir.scale(radius / norm)
        } else {
            Tensor::zeros(&[n, s])
        };
        if numeric_rank(&y_full.add(&delta)?, DEFAULT_RANK_TOL)? == s {
            kept += 1;
        }
    }
    Ok(kept as f64 / trials as f64)
}

/// Least singular value of an `N×s` matrix (`N ≥ s`).
pub fn smallest_singular_value<T: Scalar>(y: &Tensor<T>) -> Result<f64> {
    let s = singular_values(y)?;
    Ok(s.last().map_or(0.0, |v| v.as_f64()))
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = Tensor<f64>;

    #[test]
    fn zero_matrix_reaches_full_rank() {
        let p = perturb_to_full_rank(&T::zeros(&[3, 2]), 0.1).unwrap();
        assert_eq!(p.achieved_rank, 2);
        assert!(p.delta.frobenius_norm() < 0.1);
    }

    #[test]
    fn collinear_columns() {
        let mut rng = RngState::new(2);
        let u = T::uniform(&[4, 1], -1.0, 1.0, &mut rng);
        let mut y = T::zeros(&[4, 2]);
        for i in 0..4 {
            y.set(i, 0, u.at(i, 0));
            y.set(i, 1, 2.0 * u.at(i, 0));
        }
        assert_eq!(numeric_rank(&y, DEFAULT_RANK_TOL).unwrap(), 1);
        let p = perturb_to_full_rank(&y, 1e-3).unwrap();
        assert_eq!(p.achieved_rank, 2);
        assert_eq!(numeric_rank(&p.perturbed(), DEFAULT_RANK_TOL).unwrap(), 2);
        assert!(p.delta.frobenius_norm() < 1e-3);
    }

    #[test]
    fn full_rank_needs_no_perturbation() {
        let mut y = T::zeros(&[4, 2]);
        y.set(0, 0, 1.0);
        y.set(1, 1, 1.0);
        let p = perturb_to_full_rank(&y, 0.5).unwrap();
        assert_eq!(p.achieved_rank, 2);
        assert_eq!(p.delta, T::zeros(&[4, 2]));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(perturb_to_full_rank(&T::zeros(&[2, 3]), 0.1).is_err());
        assert!(perturb_to_full_rank(&T::zeros(&[3, 2]), 0.0).is_err());
    }

    #[test]
    fn embedded_identity_is_stable() {
        let mut y = T::zeros(&[4, 2]);
        y.set(0, 0, 1.0);
        y.set(1, 1, 1.0);
        let mut rng = RngState::new(1);
        assert_eq!(rank_stability_trial(&y, 1e-6, 100, &mut rng).unwrap(), 1.0);
        assert_eq!(rank_stability_trial(&y, 0.0, 10, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn stability_trial_requires_full_rank() {
        let mut rng = RngState::new(1);
        assert!(matches!(
            rank_stability_trial(&T::zeros(&[3, 2]), 1e-3, 5, &mut rng),
            Err(Error::Precondition(_))
        ));
    }
}
