//! The pipeline stages, shared by the individual subcommands and `pipeline`.

use std::collections::HashMap;

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};
use shs_safe_core::augment::{build_acsbc, check_jump_spacing, AugmentError, AugmentOptions, AugmentedConstants};
use shs_safe_core::bounds::{compare_claim, finite_horizon_unsafe_bound, infinite_horizon_unsafe_bound, SafetyBound};
use shs_safe_core::cbc::{calibrate, check_cbc, CalibrationConfig, CertificateBundle, ConditionResult, RateChoice};
use shs_safe_core::certify::{ProverConfig, Verdict};
use shs_safe_core::compose::{
    build_gain_matrices, check_small_gain, compose_acbc, find_weights, ComposeError, ComposedCertificate, GainNetwork,
    NodeGains, SmallGainCheck, WeightStrategy,
};
use shs_safe_core::model::{Edge, Network, SubsystemModel};
use shs_safe_core::sim::{estimate_unsafe_probability, Controllers, Estimate, SimConfig};

/// Outcome class of a stage, ordered from best to worst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Unknown,
    Failed,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Failed => 2,
            Status::Unknown => 3,
        }
    }

    pub fn of(v: Verdict) -> Self {
        match v {
            Verdict::Certified => Status::Ok,
            Verdict::Unknown => Status::Unknown,
            Verdict::Falsified => Status::Failed,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Unknown => "unknown",
            Status::Failed => "failed",
        }
    }
}

/// Identical subsystems (up to their name) under identical certificates are
/// processed once.
fn node_key(sub: &SubsystemModel, cert: &CertificateBundle) -> String {
    let mut doc = sub.to_doc();
    doc.name = None;
    format!("{}|{}", serde_json::to_string(&doc).unwrap_or_default(), serde_json::to_string(cert).unwrap_or_default())
}

fn dedup<T: Clone>(net: &Network, certs: &[CertificateBundle], mut f: impl FnMut(usize) -> Result<T>) -> Result<Vec<(T, Option<usize>)>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<(T, Option<usize>)> = Vec::with_capacity(net.len());
    for (i, (sub, cert)) in net.subsystems.iter().zip(certs).enumerate() {
        let key = node_key(sub, cert);
        if let Some(&first) = seen.get(&key) {
            out.push((out[first].0.clone(), Some(first)));
        } else {
            log::info!("processing {}", sub.label(i));
            seen.insert(key, i);
            out.push((f(i)?, None));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeVerification {
    pub node: usize,
    pub name: String,
    pub overall: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub same_as: Option<usize>,
    pub conditions: Vec<ConditionResult>,
}

pub struct ProverArgs {
    pub tol: f64,
    pub max_depth: i64,
    pub cfg: ProverConfig,
}

pub fn verify(net: &Network, certs: &[CertificateBundle], p: &ProverArgs) -> Result<Vec<NodeVerification>> {
    let rows = dedup(net, certs, |i| {
        check_cbc(&net.subsystems[i], &certs[i], p.tol, p.max_depth, &p.cfg).map_err(|e| anyhow!("{}: {e}", net.subsystems[i].label(i)))
    })?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (r, same_as))| NodeVerification {
            node: i,
            name: net.subsystems[i].label(i),
            overall: r.overall(),
            same_as,
            conditions: r.conditions,
        })
        .collect())
}

/// Worst verdict over all nodes, with one warning per falsified condition.
/// With `lenient`, falsifications only warn.
pub fn verification_status(rows: &[NodeVerification], lenient: bool, warnings: &mut Vec<String>) -> Status {
    let mut status = Status::Ok;
    for row in rows.iter().filter(|r| r.same_as.is_none()) {
        for c in &row.conditions {
            match c.verdict {
                Verdict::Falsified => {
                    let at = c.witness.as_ref().map(|w| format!(" at {w:?}")).unwrap_or_default();
                    let how = if lenient { " (accepted under --strict-paper)" } else { "" };
                    warnings.push(format!("{}: {} falsified{at}{how}", row.name, c.name));
                    if !lenient {
                        status = status.max(Status::Failed);
                    }
                }
                Verdict::Unknown => {
                    let note = c.note.as_ref().map(|n| format!(": {n}")).unwrap_or_default();
                    warnings.push(format!("{}: {} undecided{note}", row.name, c.name));
                    status = status.max(Status::Unknown);
                }
                Verdict::Certified => {}
            }
        }
    }
    status
}

pub struct CalibrateArgs {
    pub tol: f64,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub optimize_gammas: bool,
    pub proof_tol: f64,
    pub max_depth: i64,
}

pub fn calibrate_all(net: &Network, certs: &[CertificateBundle], a: &CalibrateArgs) -> Result<Vec<CertificateBundle>> {
    let rows = dedup(net, certs, |i| {
        let c = &certs[i].constants;
        let defaults = CalibrationConfig::default();
        let rate = |given: Option<f64>, printed: f64, search: RateChoice| match (given, a.optimize_gammas) {
            (Some(v), _) => RateChoice::Fixed(v),
            (None, true) => search,
            (None, false) => RateChoice::Fixed(printed),
        };
        let cfg = CalibrationConfig {
            tol: a.tol,
            proof_tol: a.proof_tol,
            max_depth: a.max_depth,
            gamma1: rate(a.gamma1, c.gamma1, defaults.gamma1),
            gamma2: rate(a.gamma2, c.gamma2, defaults.gamma2),
            ..defaults
        };
        let b = &certs[i];
        calibrate(&net.subsystems[i], &b.b, &b.nu_flow, &b.nu_jump, &cfg).map_err(|e| anyhow!("{}: {e}", net.subsystems[i].label(i)))
    })?;
    Ok(rows.into_iter().map(|(b, _)| b).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeAugmentation {
    pub node: usize,
    pub name: String,
    pub jump_spacing_ok: bool,
    pub w_sup_sq: f64,
    pub constants: AugmentedConstants<f64>,
}

pub struct AugmentArgs {
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
}

pub fn augment(net: &Network, certs: &[CertificateBundle], a: &AugmentArgs) -> Result<Vec<NodeAugmentation>, (usize, AugmentError)> {
    net.subsystems
        .iter()
        .zip(certs)
        .enumerate()
        .map(|(i, (sub, cert))| {
            let d = AugmentOptions::defaults(sub.eps2);
            let opts = AugmentOptions { alpha1: a.alpha1.unwrap_or(d.alpha1), alpha2: a.alpha2.unwrap_or(d.alpha2) };
            let c = &cert.constants;
            let w_sup_sq = sub.boxes.w.sup_sq_norm();
            let constants = build_acsbc(c, sub.tau, sub.eps1, sub.eps2, opts, w_sup_sq).map_err(|e| (i, e))?;
            Ok(NodeAugmentation {
                node: i,
                name: sub.label(i),
                jump_spacing_ok: check_jump_spacing(c.gamma1, c.gamma2, sub.tau, sub.eps1, sub.eps2),
                w_sup_sq,
                constants,
            })
        })
        .collect()
}

/// Input of the composition stage; an augment report's `result` has this shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainDoc {
    pub gains: Vec<NodeGains<f64>>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Weights {
    /// Uniform weights, falling back to the iterative search.
    Auto,
    Uniform,
    Iterative,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComposeOutcome {
    pub composed: Option<ComposedCertificate<f64>>,
    /// Small-gain diagnostics at the weights tried last.
    pub check: SmallGainCheck<f64>,
    pub weights: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn compose(doc: &GainDoc, weights: Weights, warnings: &mut Vec<String>) -> Result<ComposeOutcome> {
    let (theta, psi) = build_gain_matrices(&doc.gains, &doc.edges)?;
    let (xi, used) = match &doc.xi {
        Some(xi) => (Ok(xi.clone()), "given"),
        None => match weights {
            Weights::Uniform => (find_weights(&theta, &psi, WeightStrategy::Uniform), "uniform"),
            Weights::Iterative => (find_weights(&theta, &psi, WeightStrategy::Iterative), "iterative"),
            Weights::Auto => match find_weights(&theta, &psi, WeightStrategy::Uniform) {
                Ok(xi) => (Ok(xi), "uniform"),
                Err(_) => {
                    warnings.push("uniform weights violate the small-gain condition; searching weights".into());
                    (find_weights(&theta, &psi, WeightStrategy::Iterative), "iterative")
                }
            },
        },
    };
    let (xi, search_error) = match xi {
        Ok(xi) => (xi, None),
        Err(e) => (vec![1.0 / theta.len().max(1) as f64; theta.len()], Some(e)),
    };
    let gn = GainNetwork::from_parts(theta, psi, xi, doc.gains.clone())?;
    let check = check_small_gain(&gn);
    let (composed, error) = match search_error {
        Some(e) => (None, Some(e.to_string())),
        None => match compose_acbc(&gn) {
            Ok(c) => (Some(c), None),
            Err(e @ (ComposeError::ConditionsFail { .. } | ComposeError::RateOutOfRange(_))) => (None, Some(e.to_string())),
            Err(e) => return Err(e.into()),
        },
    };
    Ok(ComposeOutcome { composed, check, weights: used, error })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundOutcome {
    pub bound: SafetyBound<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim: Option<shs_safe_core::bounds::ClaimCheck<f64>>,
}

pub fn bound(
    c: (f64, f64, f64, f64),
    horizon: Option<u64>,
    claim: Option<(f64, f64)>,
    warnings: &mut Vec<String>,
) -> Result<BoundOutcome> {
    let (mu, beta, eta, gamma) = c;
    let bound = match horizon {
        Some(t) => finite_horizon_unsafe_bound(mu, beta, eta, gamma, t)?,
        None => infinite_horizon_unsafe_bound(mu, beta, eta)?,
    };
    if bound.raw_value > 1.0 {
        warnings.push(format!("unsafe bound {} exceeds 1 and was clamped", bound.raw_value));
    }
    let claim = claim.map(|(p, tol)| {
        let check = compare_claim(&bound, p, tol);
        if !check.matches {
            warnings.push(format!(
                "claimed safety {p} does not match the computed lower bound {} (difference {:+.4})",
                bound.safety_lower_bound,
                bound.safety_lower_bound - p
            ));
        }
        check
    });
    Ok(BoundOutcome { bound, claim })
}

pub fn simulate(net: &Network, certs: &[CertificateBundle], cfg: &SimConfig) -> Result<Estimate> {
    Ok(estimate_unsafe_probability(net, &Controllers::from_bundles(certs), cfg)?)
}
