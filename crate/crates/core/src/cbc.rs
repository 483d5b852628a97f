//! Control barrier certificate conditions for one subsystem.
//!
//! A certificate `B(x)` with flow and jump controllers is checked through
//! seven slack polynomials, each proved nonnegative on its box:
//!
//! | name               | slack                                        | box     |
//! |--------------------|----------------------------------------------|---------|
//! | `lower_quadratic`  | `B − κ̄‖x‖²`                                  | `X`     |
//! | `initial_level`    | `μ̄ − B`                                      | `X0`    |
//! | `unsafe_level`     | `B − β̄`                                      | `Xu`    |
//! | `flow_decrease`    | `−ℒB − γ₁B + φ̄₁‖w‖² + η̄₁`                    | `X × W` |
//! | `jump_decrease`    | `−E[B(f₂)] + γ₂B + φ̄₂‖w‖² + η̄₂`              | `X × W` |
//! | `flow_input_range` | `ν(x) − U_lo`, `U_hi − ν(x)` per input        | `X`     |
//! | `jump_input_range` | same for `ν̂`                                 | `X`     |

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{global_extremum, prove_nonneg, CertifyError, ExtremumKind, ProverConfig, Verdict};
use crate::model::SubsystemModel;
use crate::poly::{PolyError, Polynomial};
use crate::{Poly, Region, Scalar};

#[derive(Debug, Error)]
pub enum CbcError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error("noise variable {var} needs moments up to order {degree}")]
    MissingMoment { var: String, degree: u32 },
    #[error("invalid certificate: {0}")]
    InvalidBundle(String),
    #[error("calibration failed on {condition}: {message}")]
    Calibration { condition: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbcConstants<T = f64> {
    pub kappa_bar: T,
    pub mu_bar: T,
    pub beta_bar: T,
    pub gamma1: T,
    pub gamma2: T,
    pub phi1_bar: T,
    pub phi2_bar: T,
    pub eta1_bar: T,
    pub eta2_bar: T,
}

impl<T: Scalar> CbcConstants<T> {
    pub fn check(&self) -> Result<(), CbcError> {
        let all = [
            self.kappa_bar,
            self.mu_bar,
            self.beta_bar,
            self.gamma1,
            self.gamma2,
            self.phi1_bar,
            self.phi2_bar,
            self.eta1_bar,
            self.eta2_bar,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(CbcError::InvalidBundle("constants must be finite".into()));
        }
        if self.kappa_bar <= T::zero() {
            return Err(CbcError::InvalidBundle(format!("kappa_bar must be positive, got {}", self.kappa_bar)));
        }
        if self.gamma2 <= T::zero() {
            return Err(CbcError::InvalidBundle(format!("gamma2 must be positive, got {}", self.gamma2)));
        }
        let named = [
            ("mu_bar", self.mu_bar),
            ("beta_bar", self.beta_bar),
            ("phi1_bar", self.phi1_bar),
            ("phi2_bar", self.phi2_bar),
            ("eta1_bar", self.eta1_bar),
            ("eta2_bar", self.eta2_bar),
        ];
        for (n, v) in named {
            if v < T::zero() {
                return Err(CbcError::InvalidBundle(format!("{n} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Barrier polynomial, controllers and constants of one subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateBundle {
    #[serde(rename = "B")]
    pub b: Poly,
    pub nu_flow: Vec<Poly>,
    pub nu_jump: Vec<Poly>,
    pub constants: CbcConstants,
}

fn controller_bindings(sub: &SubsystemModel, nu: &[Poly], target: &[String]) -> Result<BTreeMap<String, Poly>, CbcError> {
    if nu.len() != sub.input_dim() {
        return Err(CbcError::InvalidBundle(format!(
            "controller has {} components, subsystem has {} inputs",
            nu.len(),
            sub.input_dim()
        )));
    }
    let mut out = BTreeMap::new();
    for (v, q) in sub.input_vars().iter().zip(nu) {
        let q = q
            .align_to(sub.state_vars())
            .map_err(|e| CbcError::InvalidBundle(format!("controller for {v}: {e}")))?;
        out.insert(v.clone(), q.align_to(target)?);
    }
    Ok(out)
}

fn barrier_on(sub: &SubsystemModel, b: &Poly, vars: &[String]) -> Result<Poly, CbcError> {
    let b = b
        .align_to(sub.state_vars())
        .map_err(|e| CbcError::InvalidBundle(format!("barrier must depend on state variables only: {e}")))?;
    Ok(b.align_to(vars)?)
}

/// Infinitesimal generator of `B` along the flow with `ν = nu_flow(x)`,
/// as a polynomial in `(x, w)`:
/// `∇B·f₁ + ½ Tr(σσᵀ ∇²B) + Σⱼ λⱼ (B(x + ρ eⱼ) − B(x))`.
pub fn generator(sub: &SubsystemModel, b: &Poly, nu_flow: &[Poly]) -> Result<Poly, CbcError> {
    let fv = sub.flow_vars();
    let bf = barrier_on(sub, b, &fv)?;
    let xs = sub.state_vars();
    let mut acc = Polynomial::zero(fv.clone())?;

    let grads: Vec<Poly> = xs.iter().map(|x| bf.differentiate(x)).collect::<Result<_, _>>()?;
    for (g, f) in grads.iter().zip(&sub.f1) {
        acc = acc.try_add(&g.try_mul(f)?)?;
    }

    let cols = sub.sigma.first().map_or(0, Vec::len);
    if cols > 0 {
        for (k, xk) in xs.iter().enumerate() {
            for (l, _) in xs.iter().enumerate() {
                let mut sst = Polynomial::zero(fv.clone())?;
                for c in 0..cols {
                    sst = sst.try_add(&sub.sigma[k][c].try_mul(&sub.sigma[l][c])?)?;
                }
                if sst.is_zero() {
                    continue;
                }
                let h = grads[l].differentiate(xk)?;
                acc = acc.try_add(&sst.try_mul(&h)?.scale(0.5))?;
            }
        }
    }

    for (j, &lam) in sub.lambda.iter().enumerate() {
        let mut shift = BTreeMap::new();
        for (k, xk) in xs.iter().enumerate() {
            let moved = Polynomial::variable(fv.clone(), xk)?.try_add(&sub.rho[k][j])?;
            shift.insert(xk.clone(), moved);
        }
        let shifted = bf.substitute_into(&shift, &fv)?;
        acc = acc.try_add(&shifted.try_sub(&bf)?.scale(lam))?;
    }

    close_loop(sub, &acc, nu_flow)
}

fn close_loop(sub: &SubsystemModel, p: &Poly, nu: &[Poly]) -> Result<Poly, CbcError> {
    let cv = sub.closed_vars();
    let bindings = controller_bindings(sub, nu, &cv)?;
    Ok(p.substitute_into(&bindings, &cv)?)
}

/// `E[B(f₂(x, ν̂(x), w, ς))]` as a polynomial in `(x, w)`, replacing each
/// power of a noise variable by its moment.
pub fn expected_jump(sub: &SubsystemModel, b: &Poly, nu_jump: &[Poly]) -> Result<Poly, CbcError> {
    let jv = sub.jump_vars();
    let bindings: BTreeMap<String, Poly> =
        sub.state_vars().iter().cloned().zip(sub.f2.iter().cloned()).collect();
    let b = b
        .align_to(sub.state_vars())
        .map_err(|e| CbcError::InvalidBundle(format!("barrier must depend on state variables only: {e}")))?;
    let mut composed = b.substitute_into(&bindings, &jv)?;
    for v in sub.noise_vars() {
        let k = composed.var_index(v).expect("noise variables are jump variables");
        let deg = composed.degrees()[k];
        let moments = sub
            .moments(v, deg)
            .ok_or_else(|| CbcError::MissingMoment { var: v.clone(), degree: deg })?;
        composed = composed.expect_over(v, &moments)?;
    }
    let fv = sub.flow_vars();
    let composed = composed.align_to(&fv)?;
    close_loop(sub, &composed, nu_jump)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    LowerQuadratic,
    InitialLevel,
    UnsafeLevel,
    FlowDecrease,
    JumpDecrease,
    FlowInputRange,
    JumpInputRange,
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::LowerQuadratic,
        Condition::InitialLevel,
        Condition::UnsafeLevel,
        Condition::FlowDecrease,
        Condition::JumpDecrease,
        Condition::FlowInputRange,
        Condition::JumpInputRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Condition::LowerQuadratic => "lower_quadratic",
            Condition::InitialLevel => "initial_level",
            Condition::UnsafeLevel => "unsafe_level",
            Condition::FlowDecrease => "flow_decrease",
            Condition::JumpDecrease => "jump_decrease",
            Condition::FlowInputRange => "flow_input_range",
            Condition::JumpInputRange => "jump_input_range",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A polynomial that must be nonnegative on a box.
#[derive(Debug, Clone)]
pub struct Obligation {
    pub condition: Condition,
    pub slack: Poly,
    pub region: Region,
}

/// Pieces of the decrease conditions that do not depend on the constants.
#[derive(Debug, Clone)]
pub struct DecreaseTerms {
    pub barrier: Poly,
    pub generator: Poly,
    pub expectation: Poly,
    pub w_norm: Poly,
}

impl DecreaseTerms {
    pub fn new(sub: &SubsystemModel, b: &Poly, nu_flow: &[Poly], nu_jump: &[Poly]) -> Result<Self, CbcError> {
        let cv = sub.closed_vars();
        Ok(Self {
            barrier: barrier_on(sub, b, &cv)?,
            generator: generator(sub, b, nu_flow)?,
            expectation: expected_jump(sub, b, nu_jump)?,
            w_norm: Polynomial::squared_norm(cv, sub.dist_vars())?,
        })
    }

    pub fn flow_slack(&self, gamma1: f64, phi1: f64, eta1: f64) -> Poly {
        self.generator
            .neg()
            .try_sub(&self.barrier.scale(gamma1))
            .and_then(|p| p.try_add(&self.w_norm.scale(phi1)))
            .expect("terms share variables")
            .add_constant(eta1)
    }

    pub fn jump_slack(&self, gamma2: f64, phi2: f64, eta2: f64) -> Poly {
        self.expectation
            .neg()
            .try_add(&self.barrier.scale(gamma2))
            .and_then(|p| p.try_add(&self.w_norm.scale(phi2)))
            .expect("terms share variables")
            .add_constant(eta2)
    }
}

fn input_range_slacks(sub: &SubsystemModel, nu: &[Poly]) -> Result<Vec<Poly>, CbcError> {
    let xs = sub.state_vars().to_vec();
    let bindings = controller_bindings(sub, nu, &xs)?;
    let mut out = Vec::new();
    for (k, v) in sub.input_vars().iter().enumerate() {
        let (lo, hi) = sub.boxes.u.interval(k);
        let q = &bindings[v];
        out.push(q.add_constant(-lo));
        out.push(q.neg().add_constant(hi));
    }
    Ok(out)
}

/// All slack polynomials of a bundle, in reporting order. Input-range
/// conditions contribute two polynomials per input.
pub fn obligations(sub: &SubsystemModel, cert: &CertificateBundle) -> Result<Vec<Obligation>, CbcError> {
    let c = &cert.constants;
    let xs = sub.state_vars().to_vec();
    let b = barrier_on(sub, &cert.b, &xs)?;
    let x_norm = Polynomial::squared_norm(xs.clone(), &xs)?;
    let x = sub.boxes.x.clone();
    let xw = sub.closed_box();
    let terms = DecreaseTerms::new(sub, &cert.b, &cert.nu_flow, &cert.nu_jump)?;

    let mut out = vec![
        Obligation { condition: Condition::LowerQuadratic, slack: b.try_sub(&x_norm.scale(c.kappa_bar))?, region: x.clone() },
        Obligation { condition: Condition::InitialLevel, slack: b.neg().add_constant(c.mu_bar), region: sub.boxes.x0.clone() },
        Obligation { condition: Condition::UnsafeLevel, slack: b.add_constant(-c.beta_bar), region: sub.boxes.xu.clone() },
        Obligation { condition: Condition::FlowDecrease, slack: terms.flow_slack(c.gamma1, c.phi1_bar, c.eta1_bar), region: xw.clone() },
        Obligation { condition: Condition::JumpDecrease, slack: terms.jump_slack(c.gamma2, c.phi2_bar, c.eta2_bar), region: xw },
    ];
    for (cond, nu) in [(Condition::FlowInputRange, &cert.nu_flow), (Condition::JumpInputRange, &cert.nu_jump)] {
        for slack in input_range_slacks(sub, nu)? {
            out.push(Obligation { condition: cond, slack, region: x.clone() });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: Condition,
    pub verdict: Verdict,
    /// Certified lower bound of the slack over its box; absent when the
    /// prover could not run.
    pub margin: Option<f64>,
    pub witness: Option<Vec<f64>>,
    pub witness_value: Option<f64>,
    pub boxes_explored: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub conditions: Vec<ConditionResult>,
}

impl ConditionReport {
    pub fn get(&self, c: Condition) -> Option<&ConditionResult> {
        self.conditions.iter().find(|r| r.name == c)
    }

    pub fn all_certified(&self) -> bool {
        self.conditions.iter().all(|r| r.verdict == Verdict::Certified)
    }

    /// Falsified dominates Unknown, which dominates Certified.
    pub fn overall(&self) -> Verdict {
        worst(self.conditions.iter().map(|r| r.verdict))
    }
}

fn worst(vs: impl Iterator<Item = Verdict>) -> Verdict {
    let mut out = Verdict::Certified;
    for v in vs {
        match (out, v) {
            (_, Verdict::Falsified) => return Verdict::Falsified,
            (Verdict::Certified, Verdict::Unknown) => out = Verdict::Unknown,
            _ => {}
        }
    }
    out
}

/// Checks every condition of `cert` on the boxes of `sub`.
///
/// Capability failures of the prover (degree cap, missing moments) turn the
/// affected condition into `Unknown` with a note instead of an error.
pub fn check_cbc(
    sub: &SubsystemModel,
    cert: &CertificateBundle,
    tol: f64,
    max_depth: i64,
    cfg: &ProverConfig,
) -> Result<ConditionReport, CbcError> {
    cert.constants.check()?;
    let obligations = match obligations(sub, cert) {
        Ok(o) => o,
        Err(CbcError::MissingMoment { var, degree }) => {
            // Everything but the jump condition can still be checked.
            return check_without_jump(sub, cert, tol, max_depth, cfg, format!("moments of {var} up to order {degree} are needed"));
        }
        Err(e) => return Err(e),
    };
    run_obligations(&obligations, tol, max_depth, cfg, None)
}

fn check_without_jump(
    sub: &SubsystemModel,
    cert: &CertificateBundle,
    tol: f64,
    max_depth: i64,
    cfg: &ProverConfig,
    note: String,
) -> Result<ConditionReport, CbcError> {
    let c = &cert.constants;
    let xs = sub.state_vars().to_vec();
    let b = barrier_on(sub, &cert.b, &xs)?;
    let x_norm = Polynomial::squared_norm(xs.clone(), &xs)?;
    let cv = sub.closed_vars();
    let gen = generator(sub, &cert.b, &cert.nu_flow)?;
    let flow = gen
        .neg()
        .try_sub(&barrier_on(sub, &cert.b, &cv)?.scale(c.gamma1))?
        .try_add(&Polynomial::squared_norm(cv.clone(), sub.dist_vars())?.scale(c.phi1_bar))?
        .add_constant(c.eta1_bar);
    let mut obl = vec![
        Obligation { condition: Condition::LowerQuadratic, slack: b.try_sub(&x_norm.scale(c.kappa_bar))?, region: sub.boxes.x.clone() },
        Obligation { condition: Condition::InitialLevel, slack: b.neg().add_constant(c.mu_bar), region: sub.boxes.x0.clone() },
        Obligation { condition: Condition::UnsafeLevel, slack: b.add_constant(-c.beta_bar), region: sub.boxes.xu.clone() },
        Obligation { condition: Condition::FlowDecrease, slack: flow, region: sub.closed_box() },
    ];
    for (cond, nu) in [(Condition::FlowInputRange, &cert.nu_flow), (Condition::JumpInputRange, &cert.nu_jump)] {
        for slack in input_range_slacks(sub, nu)? {
            obl.push(Obligation { condition: cond, slack, region: sub.boxes.x.clone() });
        }
    }
    run_obligations(&obl, tol, max_depth, cfg, Some((Condition::JumpDecrease, note)))
}

fn run_obligations(
    obligations: &[Obligation],
    tol: f64,
    max_depth: i64,
    cfg: &ProverConfig,
    unknown: Option<(Condition, String)>,
) -> Result<ConditionReport, CbcError> {
    let results: Vec<Result<ConditionResult, CbcError>> = obligations
        .par_iter()
        .map(|o| match prove_nonneg(&o.slack, &o.region, tol, max_depth, cfg) {
            Ok(r) => Ok(ConditionResult {
                name: o.condition,
                verdict: r.verdict,
                margin: Some(r.lower_bound),
                witness: r.witness,
                witness_value: r.witness_value,
                boxes_explored: r.boxes_explored,
                note: None,
            }),
            Err(CertifyError::DegreeCap { degree, cap }) => Ok(ConditionResult {
                name: o.condition,
                verdict: Verdict::Unknown,
                margin: None,
                witness: None,
                witness_value: None,
                boxes_explored: 0,
                note: Some(format!("degree {degree} exceeds the prover cap {cap}")),
            }),
            Err(e) => Err(e.into()),
        })
        .collect();

    // merge the per-polynomial results of each condition in a fixed order
    let mut merged: Vec<ConditionResult> = Vec::new();
    for r in results {
        let r = r?;
        match merged.iter_mut().find(|m| m.name == r.name) {
            None => merged.push(r),
            Some(m) => {
                let verdict = worst([m.verdict, r.verdict].into_iter());
                if r.verdict == Verdict::Falsified && m.verdict != Verdict::Falsified {
                    m.witness = r.witness;
                    m.witness_value = r.witness_value;
                }
                m.verdict = verdict;
                m.margin = m.margin.zip(r.margin).map(|(a, b)| a.min(b));
                m.boxes_explored += r.boxes_explored;
                if m.note.is_none() {
                    m.note = r.note;
                }
            }
        }
    }
    if let Some((cond, note)) = unknown {
        merged.push(ConditionResult {
            name: cond,
            verdict: Verdict::Unknown,
            margin: None,
            witness: None,
            witness_value: None,
            boxes_explored: 0,
            note: Some(note),
        });
    }
    merged.sort_by_key(|m| m.name);
    Ok(ConditionReport { conditions: merged })
}

/// How a decay rate is chosen during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateChoice {
    Fixed(f64),
    /// Best value in `[lo, hi]`: largest `γ₁`, smallest `γ₂`.
    Search { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Absolute accuracy of the level constants and offsets.
    pub tol: f64,
    /// Relative accuracy of `κ̄`, absolute accuracy of searched rates.
    pub fine_tol: f64,
    pub max_iter: u32,
    /// Slack handed to the prover in every feasibility query. It must exceed
    /// the prover's rounding margin for slacks that touch zero to be provable,
    /// and a calibrated bundle re-verifies at any tolerance at least this.
    pub proof_tol: f64,
    pub max_depth: i64,
    pub gamma1: RateChoice,
    pub gamma2: RateChoice,
    pub phi1_max: f64,
    pub phi2_max: f64,
    pub eta1_max: f64,
    pub eta2_max: f64,
    pub prover: ProverConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            fine_tol: 1e-7,
            max_iter: 60,
            proof_tol: 1e-6,
            max_depth: 30,
            gamma1: RateChoice::Search { lo: -1.0, hi: 1.0 },
            gamma2: RateChoice::Search { lo: 1e-3, hi: 2.0 },
            phi1_max: 1e-6,
            phi2_max: 1e-6,
            eta1_max: 1.0,
            eta2_max: 1.0,
            // near-threshold queries only need to fail fast
            prover: ProverConfig { max_boxes: 50_000, ..ProverConfig::default() },
        }
    }
}

struct Search<'a> {
    cfg: &'a CalibrationConfig,
}

impl Search<'_> {
    fn holds(&self, p: &Poly, region: &Region) -> Result<bool, CbcError> {
        let r = prove_nonneg(p, region, self.cfg.proof_tol, self.cfg.max_depth, &self.cfg.prover)?;
        Ok(r.verdict == Verdict::Certified)
    }

    /// Smallest value in `[lo, hi]` passing a test that is monotone upward.
    fn smallest(
        &self,
        lo: f64,
        hi: f64,
        step: f64,
        mut ok: impl FnMut(f64) -> Result<bool, CbcError>,
    ) -> Result<Option<f64>, CbcError> {
        if !ok(hi)? {
            return Ok(None);
        }
        if ok(lo)? {
            return Ok(Some(lo));
        }
        let (mut bad, mut good) = (lo, hi);
        for _ in 0..self.cfg.max_iter {
            if good - bad <= step {
                break;
            }
            let mid = 0.5 * (bad + good);
            if ok(mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(Some(good))
    }

    /// Largest value in `[lo, hi]` passing a test that is monotone downward.
    fn largest(
        &self,
        lo: f64,
        hi: f64,
        step: f64,
        mut ok: impl FnMut(f64) -> Result<bool, CbcError>,
    ) -> Result<Option<f64>, CbcError> {
        Ok(self.smallest(-hi, -lo, step, |v| ok(-v))?.map(|v| -v))
    }
}

fn calibration_failure(c: Condition, message: impl Into<String>) -> CbcError {
    CbcError::Calibration { condition: c.name().to_string(), message: message.into() }
}

/// Tightest constants for a fixed barrier and controllers.
///
/// The level constants come from certified extrema: `μ̄` is the maximum on
/// `X0` plus `tol/2`, `β̄` the minimum on `Xu` minus `tol/2`, and `κ̄` is the
/// largest `κ` with `B − κ‖x‖²` provably nonnegative on `X`. Each decrease
/// condition first fixes its rate, then takes the least offset `η̄` with the
/// gain `φ̄` at its cap, and finally the least gain once `η̄` is padded by
/// `tol`.
pub fn calibrate(
    sub: &SubsystemModel,
    b: &Poly,
    nu_flow: &[Poly],
    nu_jump: &[Poly],
    cfg: &CalibrationConfig,
) -> Result<CertificateBundle, CbcError> {
    let search = Search { cfg };
    let xs = sub.state_vars().to_vec();
    let bx = barrier_on(sub, b, &xs)?;
    let half = cfg.tol / 2.0;

    // κ̄
    let x = &sub.boxes.x;
    let x_norm = Polynomial::squared_norm(xs.clone(), &xs)?;
    let far = x
        .vertices()
        .into_iter()
        .max_by(|a, b| {
            let na: f64 = a.iter().map(|v| v * v).sum();
            let nb: f64 = b.iter().map(|v| v * v).sum();
            na.total_cmp(&nb)
        })
        .expect("a box has at least one vertex");
    let far_norm: f64 = far.iter().map(|v| v * v).sum();
    if far_norm == 0.0 {
        return Err(calibration_failure(Condition::LowerQuadratic, "state box is the origin"));
    }
    let kappa_hi = bx.eval_unchecked(&far) / far_norm;
    if kappa_hi <= 0.0 {
        return Err(calibration_failure(Condition::LowerQuadratic, "barrier is not positive at the far corner of X"));
    }
    let kappa = search
        .largest(0.0, kappa_hi, cfg.fine_tol * kappa_hi, |k| {
            search.holds(&bx.try_sub(&x_norm.scale(k)).expect("same variables"), x)
        })?
        .ok_or_else(|| calibration_failure(Condition::LowerQuadratic, "barrier is negative on X"))?;
    if kappa <= 0.0 {
        return Err(calibration_failure(Condition::LowerQuadratic, "no positive kappa_bar exists"));
    }

    // μ̄, β̄
    let mu = global_extremum(&bx, &sub.boxes.x0, ExtremumKind::Max, half, cfg.max_depth, &cfg.prover)?.bound + half;
    let mu = mu.max(0.0);
    let beta = (global_extremum(&bx, &sub.boxes.xu, ExtremumKind::Min, half, cfg.max_depth, &cfg.prover)?.bound - half).max(0.0);

    let terms = DecreaseTerms::new(sub, b, nu_flow, nu_jump)?;
    let xw = sub.closed_box();

    // flow: largest γ₁, then least η̄₁, then least φ̄₁
    let flow_ok = |g: f64, phi: f64, eta: f64| search.holds(&terms.flow_slack(g, phi, eta), &xw);
    let gamma1 = match cfg.gamma1 {
        RateChoice::Fixed(g) => g,
        RateChoice::Search { lo, hi } => search
            .largest(lo, hi, cfg.fine_tol, |g| flow_ok(g, cfg.phi1_max, cfg.eta1_max))?
            .ok_or_else(|| calibration_failure(Condition::FlowDecrease, format!("infeasible for every gamma1 in [{lo}, {hi}]")))?,
    };
    let (phi1, eta1) = offsets(&search, Condition::FlowDecrease, cfg.phi1_max, cfg.eta1_max, |phi, eta| {
        flow_ok(gamma1, phi, eta)
    })?;

    // jump: least γ₂, then least η̄₂, then least φ̄₂
    let jump_ok = |g: f64, phi: f64, eta: f64| search.holds(&terms.jump_slack(g, phi, eta), &xw);
    let gamma2 = match cfg.gamma2 {
        RateChoice::Fixed(g) => g,
        RateChoice::Search { lo, hi } => {
            if lo <= 0.0 {
                return Err(calibration_failure(Condition::JumpDecrease, "gamma2 search range must be positive"));
            }
            search
                .smallest(lo, hi, cfg.fine_tol, |g| jump_ok(g, cfg.phi2_max, cfg.eta2_max))?
                .ok_or_else(|| calibration_failure(Condition::JumpDecrease, format!("infeasible for every gamma2 in [{lo}, {hi}]")))?
        }
    };
    let (phi2, eta2) = offsets(&search, Condition::JumpDecrease, cfg.phi2_max, cfg.eta2_max, |phi, eta| {
        jump_ok(gamma2, phi, eta)
    })?;

    let bundle = CertificateBundle {
        b: bx,
        nu_flow: nu_flow.to_vec(),
        nu_jump: nu_jump.to_vec(),
        constants: CbcConstants {
            kappa_bar: kappa,
            mu_bar: mu,
            beta_bar: beta,
            gamma1,
            gamma2,
            phi1_bar: phi1,
            phi2_bar: phi2,
            eta1_bar: eta1,
            eta2_bar: eta2,
        },
    };
    bundle.constants.check()?;
    Ok(bundle)
}

fn offsets(
    search: &Search<'_>,
    cond: Condition,
    phi_max: f64,
    eta_max: f64,
    mut ok: impl FnMut(f64, f64) -> Result<bool, CbcError>,
) -> Result<(f64, f64), CbcError> {
    let cfg = search.cfg;
    let eta_min = search
        .smallest(0.0, eta_max, cfg.tol / 10.0, |e| ok(phi_max, e))?
        .ok_or_else(|| calibration_failure(cond, format!("infeasible with phi = {phi_max}, eta = {eta_max}")))?;
    let eta = if eta_min == 0.0 { 0.0 } else { eta_min + cfg.tol };
    let phi = search
        .smallest(0.0, phi_max, 1e-3 * phi_max, |p| ok(p, eta))?
        .ok_or_else(|| calibration_failure(cond, format!("padded offset {eta} not provable at phi = {phi_max}")))?;
    Ok((phi, eta))
}
