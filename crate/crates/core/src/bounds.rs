//! Reach-probability bounds from a contracting barrier certificate.
//!
//! If `E[B⁺] ≤ γB + η` with `B ≥ β` on the unsafe set and `B ≤ μ` initially,
//! the probability of entering the unsafe set within `T` steps is at most
//!
//! * `1 − (1 − μ/β)(1 − η/β)^T` when `β ≥ η/(1 − γ)`,
//! * `(μ/β)γ^T + η/((1 − γ)β)·(1 − γ^T)` otherwise,
//!
//! and at most `μ/β` over an unbounded horizon when `η = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("invalid parameters: {0}")]
    Domain(String),
    #[error("an unbounded horizon needs eta = 0, got {0}")]
    NonzeroEta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundBranch {
    EtaSmall,
    EtaLarge,
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyBound<T> {
    /// Number of sampling periods; `None` for the unbounded horizon.
    pub horizon: Option<u64>,
    pub unsafe_bound: T,
    pub safety_lower_bound: T,
    /// Formula value before clamping to `[0, 1]`.
    pub raw_value: T,
    pub branch: BoundBranch,
    /// `|first formula − second formula|` at these parameters.
    pub branch_gap: Option<T>,
    pub mu: T,
    pub beta: T,
    pub eta: T,
    pub gamma: Option<T>,
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Both closed forms, `(eta_small, eta_large)`, without domain checks.
pub fn branch_values<T: Scalar>(mu: T, beta: T, eta: T, gamma: T, horizon: u64) -> (T, T) {
    let t = T::lit(horizon as f64);
    let one = T::one();
    let small = one - (one - mu / beta) * (one - eta / beta).powf(t);
    let gt = gamma.powf(t);
    let large = mu / beta * gt + eta / ((one - gamma) * beta) * (one - gt);
    (small, large)
}

pub fn finite_horizon_unsafe_bound<T: Scalar>(mu: T, beta: T, eta: T, gamma: T, horizon: u64) -> Result<SafetyBound<T>, BoundsError> {
    let (zero, one) = (T::zero(), T::one());
    if !(gamma > zero && gamma < one) {
        return Err(BoundsError::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(mu >= zero && beta > mu) {
        return Err(BoundsError::Domain(format!("need beta > mu >= 0, got mu = {mu}, beta = {beta}")));
    }
    if !(eta >= zero) || !eta.is_finite() || !beta.is_finite() {
        return Err(BoundsError::Domain(format!("need finite eta >= 0, got {eta}")));
    }
    let (small, large) = branch_values(mu, beta, eta, gamma, horizon);
    let branch = if beta >= eta / (one - gamma) { BoundBranch::EtaSmall } else { BoundBranch::EtaLarge };
    let raw = if branch == BoundBranch::EtaSmall { small } else { large };
    let unsafe_bound = clamp01(raw);
    Ok(SafetyBound {
        horizon: Some(horizon),
        unsafe_bound,
        safety_lower_bound: one - unsafe_bound,
        raw_value: raw,
        branch,
        branch_gap: Some((small - large).abs()),
        mu,
        beta,
        eta,
        gamma: Some(gamma),
    })
}

pub fn infinite_horizon_unsafe_bound<T: Scalar>(mu: T, beta: T, eta: T) -> Result<SafetyBound<T>, BoundsError> {
    if eta != T::zero() {
        return Err(BoundsError::NonzeroEta(eta.to_f64_lossy()));
    }
    if !(mu >= T::zero() && beta > mu) {
        return Err(BoundsError::Domain(format!("need beta > mu >= 0, got mu = {mu}, beta = {beta}")));
    }
    let raw = mu / beta;
    Ok(SafetyBound {
        horizon: None,
        unsafe_bound: clamp01(raw),
        safety_lower_bound: T::one() - clamp01(raw),
        raw_value: raw,
        branch: BoundBranch::Infinite,
        branch_gap: None,
        mu,
        beta,
        eta,
        gamma: None,
    })
}

/// A published safety figure set against the recomputed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCheck<T> {
    pub claimed_safety: T,
    pub computed_safety: T,
    pub difference: T,
    pub matches: bool,
}

pub fn compare_claim<T: Scalar>(bound: &SafetyBound<T>, claimed_safety: T, tolerance: T) -> ClaimCheck<T> {
    let difference = bound.safety_lower_bound - claimed_safety;
    ClaimCheck { claimed_safety, computed_safety: bound.safety_lower_bound, difference, matches: difference.abs() <= tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_horizon_and_zero_eta_reduce_to_level_ratio() {
        let b = finite_horizon_unsafe_bound::<f64>(0.5, 4.0, 0.001, 0.9, 0).unwrap();
        assert_eq!(b.branch, BoundBranch::EtaSmall);
        assert!((b.unsafe_bound - 0.125).abs() < 1e-15);
        let b = finite_horizon_unsafe_bound::<f64>(0.5, 4.0, 0.0, 0.9, 1000).unwrap();
        assert!((b.unsafe_bound - 0.125).abs() < 1e-15);
    }

    #[test]
    fn ring_constants() {
        let b = finite_horizon_unsafe_bound::<f64>(0.13, 4.4, 0.0012, 0.994, 100).unwrap();
        assert_eq!(b.branch, BoundBranch::EtaSmall);
        let expected = 1.0 - (1.0 - 0.13 / 4.4) * (1.0 - 0.0012f64 / 4.4).powi(100);
        assert!((b.unsafe_bound - expected).abs() < 1e-15);
        assert!((b.unsafe_bound - 0.0557).abs() < 1e-3);
        let c = compare_claim(&b, 0.973, 1e-3);
        assert!(!c.matches);
    }

    #[test]
    fn large_eta_branch_and_clamping() {
        let b = finite_horizon_unsafe_bound::<f64>(0.1, 1.0, 0.6, 0.5, 3).unwrap();
        assert_eq!(b.branch, BoundBranch::EtaLarge);
        let expected = 0.1f64 * 0.125 + 0.6 / 0.5 * (1.0 - 0.125);
        assert!((b.raw_value - expected).abs() < 1e-15);
        let b = finite_horizon_unsafe_bound::<f64>(0.1, 1.0, 0.9, 0.5, 50).unwrap();
        assert!(b.raw_value > 1.0);
        assert_eq!(b.unsafe_bound, 1.0);
        assert_eq!(b.safety_lower_bound, 0.0);
    }

    #[test]
    fn infinite_horizon() {
        assert_eq!(infinite_horizon_unsafe_bound::<f64>(0.0, 4.4, 0.0).unwrap().unsafe_bound, 0.0);
        assert_eq!(infinite_horizon_unsafe_bound::<f64>(2.0, 4.0, 0.0).unwrap().unsafe_bound, 0.5);
        assert!((infinite_horizon_unsafe_bound::<f64>(0.13, 4.4, 0.0).unwrap().unsafe_bound - 0.029_545).abs() < 1e-5);
        assert!(infinite_horizon_unsafe_bound::<f64>(0.13, 4.4, 0.1).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(finite_horizon_unsafe_bound::<f64>(0.1, 1.0, 0.0, 1.0, 1).is_err());
        assert!(finite_horizon_unsafe_bound::<f64>(1.0, 1.0, 0.0, 0.5, 1).is_err());
        assert!(finite_horizon_unsafe_bound::<f64>(0.1, 1.0, -0.1, 0.5, 1).is_err());
    }

    #[test]
    fn branches_agree_at_the_threshold() {
        let (mu, gamma, eta) = (0.2f64, 0.9, 0.1);
        let beta = eta / (1.0 - gamma);
        let (a, b) = branch_values(mu, beta, eta, gamma, 37);
        assert!((a - b).abs() < 1e-12);
    }
}
