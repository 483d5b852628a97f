//! Sound nonnegativity proofs and certified extrema for polynomials on boxes.
//!
//! Every answer is backed by a Bernstein enclosure: `Certified` means every
//! leaf of a finite partition has an enclosure lower bound at least `-tol`,
//! `Falsified` comes with a concrete point where the polynomial is evaluated
//! directly below `-tol`. Anything else is `Unknown`.

mod bernstein;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Hyperbox, PolyError, Polynomial};
use crate::scalar::Scalar;

pub use bernstein::BernsteinPatch;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("polynomial variables {poly:?} do not match box variables {region:?}")]
    BoxMismatch { poly: Vec<String>, region: Vec<String> },
    #[error("degree {degree} exceeds the supported cap of {cap}")]
    DegreeCap { degree: u32, cap: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("extremum not resolved to tolerance: certified interval [{lower}, {upper}] after {boxes} boxes")]
    Unresolved { lower: f64, upper: f64, boxes: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProverConfig {
    /// Relative floating-point margin applied to every enclosure.
    pub eps_rel: f64,
    pub degree_cap: u32,
    /// Hard cap on the size of one frontier level.
    pub max_boxes: usize,
}

impl Default for ProverConfig {
    fn default() -> Self {
        Self { eps_rel: 1e-9, degree_cap: 16, max_boxes: 4_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Falsified,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertResult<T> {
    pub verdict: Verdict,
    /// Point with the value below `-tol` (falsified only).
    pub witness: Option<Vec<T>>,
    pub witness_value: Option<T>,
    /// Certified lower bound on the polynomial over the whole box.
    pub lower_bound: T,
    /// Smallest value observed at a sampled point.
    pub upper_bound: T,
    pub boxes_explored: usize,
    pub max_depth_reached: bool,
    pub eps_fp: T,
    pub slack: T,
}

/// Enclosure of the range of `p` over `region`, widened by the floating-point margin.
pub fn bernstein_enclosure<T: Scalar>(
    p: &Polynomial<T>,
    region: &Hyperbox<T>,
    cfg: &ProverConfig,
) -> Result<(T, T), CertifyError> {
    let (patch, eps) = BernsteinPatch::new(p, region, T::lit(cfg.eps_rel), cfg.degree_cap)?;
    let (lo, hi) = patch.coefficient_range();
    Ok((lo - eps, hi + eps))
}

struct Probe<T> {
    lo: T,
    value: T,
    point: Vec<T>,
}

fn probe<T: Scalar>(p: &Polynomial<T>, patch: &BernsteinPatch<T>, eps: T) -> Probe<T> {
    let (lo, _) = patch.coefficient_range();
    let mut point = patch.center();
    let mut value = p.eval_unchecked(&point);
    let corner = patch.lowest_corner();
    let cv = p.eval_unchecked(&corner);
    if cv < value {
        point = corner;
        value = cv;
    }
    Probe { lo: lo - eps, value, point }
}

fn check_args<T: Scalar>(tol: T, max_depth: i64) -> Result<(), CertifyError> {
    if !(tol.is_finite() && tol >= T::zero()) {
        return Err(CertifyError::InvalidArgument(format!("tolerance must be finite and nonnegative, got {tol}")));
    }
    if max_depth <= 0 {
        return Err(CertifyError::InvalidArgument(format!("max_depth must be positive, got {max_depth}")));
    }
    Ok(())
}

/// Decides whether `p ≥ -tol` holds on `region`.
///
/// Subdivision proceeds level by level; each level is evaluated in parallel
/// and merged in a fixed order, so the result does not depend on the thread
/// count.
pub fn prove_nonneg<T: Scalar>(
    p: &Polynomial<T>,
    region: &Hyperbox<T>,
    tol: T,
    max_depth: i64,
    cfg: &ProverConfig,
) -> Result<CertResult<T>, CertifyError> {
    check_args(tol, max_depth)?;
    let (root, eps) = BernsteinPatch::new(p, region, T::lit(cfg.eps_rel), cfg.degree_cap)?;
    let falsify_below = -(tol.max(eps));

    let mut frontier = vec![root];
    // minimum enclosure bound over boxes that will not be refined further
    let mut closed = T::infinity();
    let mut upper = T::infinity();
    let mut explored = 0usize;
    let mut undecided = false;

    for depth in 0..=max_depth {
        let probes: Vec<Probe<T>> = frontier.par_iter().map(|b| probe(p, b, eps)).collect();
        explored += frontier.len();
        for pr in &probes {
            upper = upper.min(pr.value);
        }
        if let Some(bad) = probes.iter().find(|pr| pr.value < falsify_below) {
            let level_min = probes.iter().fold(T::infinity(), |m, pr| m.min(pr.lo));
            return Ok(CertResult {
                verdict: Verdict::Falsified,
                witness: Some(bad.point.clone()),
                witness_value: Some(bad.value),
                lower_bound: closed.min(level_min),
                upper_bound: upper,
                boxes_explored: explored,
                max_depth_reached: false,
                eps_fp: eps,
                slack: tol,
            });
        }
        // A sample below -tol but within rounding of zero: no partition can
        // certify it, and it is too close to zero to count as a witness.
        if upper < -tol {
            let level_min = probes.iter().fold(T::infinity(), |m, pr| m.min(pr.lo));
            return Ok(CertResult {
                verdict: Verdict::Unknown,
                witness: None,
                witness_value: None,
                lower_bound: closed.min(level_min),
                upper_bound: upper,
                boxes_explored: explored,
                max_depth_reached: false,
                eps_fp: eps,
                slack: tol,
            });
        }
        let mut open = Vec::new();
        let mut open_min = T::infinity();
        for (patch, pr) in frontier.iter().zip(&probes) {
            if pr.lo >= -tol {
                closed = closed.min(pr.lo);
                continue;
            }
            match patch.split_axis() {
                Some(_) if depth < max_depth => {
                    open_min = open_min.min(pr.lo);
                    open.push(patch);
                }
                // Out of depth, or constant in every coordinate it depends on.
                _ => {
                    undecided = true;
                    closed = closed.min(pr.lo);
                }
            }
        }
        if 2 * open.len() > cfg.max_boxes {
            undecided = true;
            closed = closed.min(open_min);
            break;
        }
        frontier = open
            .par_iter()
            .flat_map_iter(|b| {
                let axis = b.split_axis().expect("open patches are splittable");
                let (l, r) = b.split(axis);
                [l, r]
            })
            .collect();
        if frontier.is_empty() {
            break;
        }
    }

    Ok(CertResult {
        verdict: if undecided { Verdict::Unknown } else { Verdict::Certified },
        witness: None,
        witness_value: None,
        lower_bound: closed,
        upper_bound: upper,
        boxes_explored: explored,
        max_depth_reached: undecided,
        eps_fp: eps,
        slack: tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extremum<T> {
    /// Certified bound: no value on the box is below it (min) or above it (max).
    pub bound: T,
    /// Value attained at `arg`; within `tol` of `bound`.
    pub attained: T,
    pub arg: Vec<T>,
    pub boxes_explored: usize,
}

struct Queued<T> {
    lo: T,
    seq: usize,
    patch: BernsteinPatch<T>,
}

impl<T: Scalar> PartialEq for Queued<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Queued<T> {}
impl<T: Scalar> PartialOrd for Queued<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Queued<T> {
    // reversed so the max-heap pops the smallest lower bound, oldest first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lo
            .partial_cmp(&self.lo)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Certified global minimum or maximum of `p` over `region` to within `tol`.
pub fn global_extremum<T: Scalar>(
    p: &Polynomial<T>,
    region: &Hyperbox<T>,
    kind: ExtremumKind,
    tol: T,
    max_depth: i64,
    cfg: &ProverConfig,
) -> Result<Extremum<T>, CertifyError> {
    check_args(tol, max_depth)?;
    let target = match kind {
        ExtremumKind::Min => p.clone(),
        ExtremumKind::Max => p.neg(),
    };
    let flip = |v: T| match kind {
        ExtremumKind::Min => v,
        ExtremumKind::Max => -v,
    };
    let (root, eps) = BernsteinPatch::new(&target, region, T::lit(cfg.eps_rel), cfg.degree_cap)?;
    let first = probe(&target, &root, eps);
    let mut best = first.value;
    let mut arg = first.point;
    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    heap.push(Queued { lo: first.lo, seq, patch: root });
    let mut explored = 1usize;
    let mut last_lo = first.lo;

    while let Some(Queued { lo, patch, .. }) = heap.pop() {
        last_lo = lo;
        if best - lo <= tol {
            return Ok(Extremum { bound: flip(lo), attained: flip(best), arg, boxes_explored: explored });
        }
        let axis = match patch.split_axis() {
            Some(a) if (patch.depth() as i64) < max_depth && explored < cfg.max_boxes => a,
            _ => {
                let (a, b) = (flip(lo), flip(best));
                return Err(CertifyError::Unresolved {
                    lower: a.min(b).to_f64_lossy(),
                    upper: a.max(b).to_f64_lossy(),
                    boxes: explored,
                });
            }
        };
        let (l, r) = patch.split(axis);
        for child in [l, r] {
            let pr = probe(&target, &child, eps);
            explored += 1;
            if pr.value < best {
                best = pr.value;
                arg = pr.point;
            }
            if pr.lo <= best {
                seq += 1;
                heap.push(Queued { lo: pr.lo, seq, patch: child });
            }
        }
    }
    // Every box was pruned: the incumbent is within rounding of the optimum.
    let bound = last_lo.min(best);
    Ok(Extremum { bound: flip(bound), attained: flip(best), arg, boxes_explored: explored })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::var_names;

    fn case_study_barrier() -> Polynomial<f64> {
        Polynomial::univariate("x", &[0.0557, -0.0734, 0.0721, -0.0311, 0.0049])
    }

    #[test]
    fn square_is_nonnegative() {
        let p = Polynomial::<f64>::univariate("x", &[0.0, 0.0, 1.0]);
        let b = Hyperbox::from_intervals([("x", -1.0, 1.0)]).unwrap();
        let r = prove_nonneg(&p, &b, 1e-6, 30, &ProverConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Certified);
        assert!(r.lower_bound >= -1e-6 && r.lower_bound <= 0.0);
    }

    #[test]
    fn shifted_square_is_falsified_near_zero() {
        let p = Polynomial::<f64>::univariate("x", &[-0.01, 0.0, 1.0]);
        let b = Hyperbox::from_intervals([("x", -1.0, 1.0)]).unwrap();
        let r = prove_nonneg(&p, &b, 1e-6, 30, &ProverConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Falsified);
        let w = r.witness.unwrap();
        assert!(w[0].abs() < 0.1);
        assert!(p.eval(&w).unwrap() < -1e-6);
    }

    #[test]
    fn barrier_minimum_on_wide_interval() {
        let b = Hyperbox::from_intervals([("x", -8.0, 8.0)]).unwrap();
        let e = global_extremum(&case_study_barrier(), &b, ExtremumKind::Min, 1e-6, 60, &ProverConfig::default())
            .unwrap();
        assert!(e.bound <= e.attained && e.attained - e.bound <= 1e-6);
        assert!((e.attained - 0.026_79).abs() < 1e-4, "{}", e.attained);
        assert!((e.arg[0] - 2.14).abs() < 0.02);
    }

    #[test]
    fn maximum_on_initial_set() {
        let b = Hyperbox::from_intervals([("x", 6.0, 7.0)]).unwrap();
        let e = global_extremum(&case_study_barrier(), &b, ExtremumKind::Max, 1e-7, 60, &ProverConfig::default())
            .unwrap();
        assert!((e.bound - 4.1724).abs() < 1e-7);
    }

    #[test]
    fn two_variable_rejection_of_bad_inputs() {
        let vars = var_names(&["x", "y"]);
        let p = Polynomial::<f64>::variable(vars, "x").unwrap();
        let b = Hyperbox::from_intervals([("x", 0.0, 1.0)]).unwrap();
        assert!(matches!(
            prove_nonneg(&p, &b, 1e-6, 10, &ProverConfig::default()),
            Err(CertifyError::BoxMismatch { .. })
        ));
        let b2 = Hyperbox::from_intervals([("x", 0.0, 1.0), ("y", 0.0, 1.0)]).unwrap();
        assert!(prove_nonneg(&p, &b2, 1e-6, 0, &ProverConfig::default()).is_err());
        assert!(prove_nonneg(&p, &b2, -1.0, 5, &ProverConfig::default()).is_err());
        let high = Polynomial::<f64>::univariate("x", &[0.0; 18]).add_constant(1.0);
        let high = high.try_add(&Polynomial::univariate("x", &[0.0; 17].iter().copied().chain([1.0]).collect::<Vec<_>>())).unwrap();
        assert!(matches!(
            prove_nonneg(&high, &b, 1e-6, 5, &ProverConfig::default()),
            Err(CertifyError::DegreeCap { .. })
        ));
    }

    #[test]
    fn tangent_zero_is_unknown_with_zero_tolerance() {
        // (x - 1/3)^2 touches zero at a point that is never a dyadic midpoint
        let p = Polynomial::<f64>::univariate("x", &[1.0 / 9.0, -2.0 / 3.0, 1.0]);
        let b = Hyperbox::from_intervals([("x", 0.0, 1.0)]).unwrap();
        let cfg = ProverConfig { eps_rel: 1e-9, ..Default::default() };
        let r = prove_nonneg(&p, &b, 0.0, 12, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Unknown);
        assert!(r.max_depth_reached);
    }
}
