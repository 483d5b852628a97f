//! Counter-augmented sub-barrier certificates.
//!
//! A barrier `B̄` certified for the flow and the jump separately becomes a
//! certificate `B(x, ϑ) = ϖ(ϑ)·B̄(x)` of the augmented subsystem, whose single
//! transition (one sampling period of flow, or a jump) contracts by `γᵢ < 1`.
//! Which weight `ϖ` works depends on the signs of the flow and jump rates:
//!
//! * `γ₁ > 0`, `γ₂ < 1`: `ϖ ≡ 1`
//! * `γ₁ > 0`, `γ₂ ≥ 1`: `ϖ(ϑ) = e^{γ₁τα₁ϑ}`, trading flow decay for jump growth
//! * `γ₁ ≤ 0`, `γ₂ < 1`: `ϖ(ϑ) = γ₂^{ϑ/α₂}`, trading jump decay for flow growth

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbc::CbcConstants;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("jump spacing fails: ln(gamma2) - gamma1*tau*theta is not negative for some theta in [{eps1}, {eps2}]")]
    JumpSpacing { eps1: u32, eps2: u32 },
    #[error("no augmentation exists for gamma1 <= 0 together with gamma2 >= 1")]
    UnsupportedCase,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("augmented rate {gamma} is not below 1 ({branch:?} branch)")]
    NotContracting { gamma: f64, branch: Branch },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundCase {
    Bound1,
    Bound2,
    Bound3,
}

/// The transition whose bound attains the maximum in `γᵢ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Flow,
    Jump,
}

/// Counter weight `ϖ(ϑ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Varpi<T> {
    One,
    /// `e^{γ₁τα₁ϑ}`
    Exponential { gamma1: T, tau: T, alpha1: T },
    /// `γ₂^{ϑ/α₂}`
    Power { gamma2: T, alpha2: T },
}

impl<T: Scalar> Varpi<T> {
    pub fn at(&self, theta: u32) -> T {
        let th = T::lit(theta as f64);
        match *self {
            Varpi::One => T::one(),
            Varpi::Exponential { gamma1, tau, alpha1 } => (gamma1 * tau * alpha1 * th).exp(),
            Varpi::Power { gamma2, alpha2 } => gamma2.powf(th / alpha2),
        }
    }

    /// Smallest weight over `ϑ ∈ {0, …, eps2}`.
    pub fn min_over(&self, eps2: u32) -> T {
        (0..=eps2).map(|t| self.at(t)).fold(T::infinity(), T::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedConstants<T> {
    pub case: BoundCase,
    pub varpi: Varpi<T>,
    pub gamma: T,
    pub gamma_branch: Branch,
    pub phi: T,
    pub eta: T,
    pub kappa: T,
    pub mu: T,
    pub beta: T,
    pub notes: Vec<String>,
}

/// `ln γ₂ − γ₁τϑ < 0` for every `ϑ ∈ {eps1, …, eps2}`.
pub fn check_jump_spacing<T: Scalar>(gamma1: T, gamma2: T, tau: T, eps1: u32, eps2: u32) -> bool {
    if gamma2 <= T::zero() || eps1 > eps2 {
        return false;
    }
    let l = gamma2.ln();
    // linear in ϑ: the endpoints decide
    [eps1, eps2].iter().all(|&t| l - gamma1 * tau * T::lit(t as f64) < T::zero())
}

/// `(a, b, c)` with `E[B̄(x(τ⁻))] ≤ a·B̄(x) + b·‖w‖∞² + c` over one period of flow.
pub fn flow_bound_coefficients<T: Scalar>(gamma1: T, tau: T, phi1_bar: T, eta1_bar: T) -> (T, T, T) {
    let a = (-gamma1 * tau).exp();
    (a, a * tau * phi1_bar, a * tau * eta1_bar)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentOptions<T> {
    pub alpha1: T,
    pub alpha2: T,
}

impl<T: Scalar> AugmentOptions<T> {
    /// `α₁ = 0.1`, `α₂ = eps2 + 1`.
    pub fn defaults(eps2: u32) -> Self {
        Self { alpha1: T::lit(0.1), alpha2: T::lit(eps2 as f64 + 1.0) }
    }
}

fn pick<T: Scalar>(flow: T, jump: T) -> (T, Branch) {
    if flow >= jump {
        (flow, Branch::Flow)
    } else {
        (jump, Branch::Jump)
    }
}

/// Augmented constants of one subsystem. `w_sup_sq` is `sup ‖w‖²` over the
/// disturbance box, standing in for the essential supremum of the disturbance.
pub fn build_acsbc<T: Scalar>(
    c: &CbcConstants<T>,
    tau: T,
    eps1: u32,
    eps2: u32,
    opts: AugmentOptions<T>,
    w_sup_sq: T,
) -> Result<AugmentedConstants<T>, AugmentError> {
    let zero = T::zero();
    let one = T::one();
    if !(tau > zero) || eps1 == 0 || eps1 > eps2 || !(w_sup_sq >= zero) {
        return Err(AugmentError::InvalidParameter(format!(
            "need tau > 0, 1 <= eps1 <= eps2 and w_sup_sq >= 0 (tau = {tau}, eps1 = {eps1}, eps2 = {eps2}, w_sup_sq = {w_sup_sq})"
        )));
    }
    if !(c.gamma2 > zero) {
        return Err(AugmentError::InvalidParameter(format!("gamma2 must be positive, got {}", c.gamma2)));
    }
    if c.gamma1 <= zero && c.gamma2 >= one {
        return Err(AugmentError::UnsupportedCase);
    }
    if !check_jump_spacing(c.gamma1, c.gamma2, tau, eps1, eps2) {
        return Err(AugmentError::JumpSpacing { eps1, eps2 });
    }
    let (g1, g2) = (c.gamma1, c.gamma2);
    let a = (-g1 * tau).exp();
    let mut notes = Vec::new();

    let (case, varpi, factor, gamma_pair) = if g1 > zero && g2 < one {
        if a > g2 {
            notes.push(format!("flow contraction exp(-gamma1*tau) = {a} exceeds gamma2 = {g2} and sets the rate"));
        }
        (BoundCase::Bound1, Varpi::One, a, (a, g2))
    } else if g1 > zero {
        let al = opts.alpha1;
        if !(al > zero && al < one) {
            return Err(AugmentError::InvalidParameter(format!("alpha1 must lie in (0, 1), got {al}")));
        }
        if !(g2.ln() - g1 * tau * al * T::lit(eps1 as f64) < zero) {
            return Err(AugmentError::InvalidParameter(format!(
                "alpha1 = {al} too small: ln(gamma2) - gamma1*tau*alpha1*eps1 must be negative"
            )));
        }
        let factor = (g1 * tau * al * T::lit(eps2 as f64)).exp() * a;
        let flow = (-g1 * tau * (one - al)).exp();
        let jump = (-g1 * tau * al * T::lit(eps1 as f64)).exp() * g2;
        (BoundCase::Bound2, Varpi::Exponential { gamma1: g1, tau, alpha1: al }, factor, (flow, jump))
    } else if g2 < one {
        let al = opts.alpha2;
        if !(al > T::lit(eps2 as f64)) {
            return Err(AugmentError::InvalidParameter(format!("alpha2 must exceed eps2 = {eps2}, got {al}")));
        }
        let root = g2.powf(one / al);
        let flow = a * root;
        let jump = g2.powf((al - T::lit(eps2 as f64)) / al);
        (BoundCase::Bound3, Varpi::Power { gamma2: g2, alpha2: al }, root * a, (flow, jump))
    } else {
        unreachable!("excluded above")
    };

    let (gamma, gamma_branch) = pick(gamma_pair.0, gamma_pair.1);
    if !(gamma < one) {
        return Err(AugmentError::NotContracting { gamma: gamma.to_f64_lossy(), branch: gamma_branch });
    }
    let phi = (factor * tau * c.phi1_bar).max(c.phi2_bar);
    let eta = (factor * tau * c.phi1_bar * w_sup_sq + factor * tau * c.eta1_bar).max(c.eta2_bar);
    let wmin = varpi.min_over(eps2);
    Ok(AugmentedConstants {
        case,
        varpi,
        gamma,
        gamma_branch,
        phi,
        eta,
        kappa: wmin * c.kappa_bar,
        mu: varpi.at(0) * c.mu_bar,
        beta: wmin * c.beta_bar,
        notes,
    })
}
