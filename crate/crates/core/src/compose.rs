//! Small-gain composition of augmented sub-barrier certificates.
//!
//! With `Θ = diag(1 − γᵢ)` and `Ψ` holding `ψᵢⱼ = φᵢ/κⱼ` on every
//! interconnection `i ← j`, weights `ξ > 0` certify the network when every
//! component of `ξᵀ(−Θ + Ψ)` is negative and `Σξβ > Σξμ`. The network
//! certificate `Σ ξᵢBᵢ` then contracts by `γ = 1 + maxᵢ Γᵢ`, where
//! `ξⱼΓⱼ = [ξᵀ(−Θ + Ψ)]ⱼ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentedConstants;
use crate::model::Edge;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no feasible weights found; best max residual {max_residual}")]
    Infeasible { max_residual: f64 },
    #[error("small-gain conditions do not hold (decrease: {decrease}, levels: {levels})")]
    ConditionsFail { decrease: bool, levels: bool },
    #[error("composed rate {0} is outside (0, 1)")]
    RateOutOfRange(f64),
}

/// Sparse `Ψ`, stored by column: `cols[j]` lists `(i, ψᵢⱼ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix<T> {
    n: usize,
    cols: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> GainMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, cols: vec![Vec::new(); n] }
    }

    /// Adds `v` to entry `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let col = &mut self.cols[j];
        match col.iter_mut().find(|(r, _)| *r == i) {
            Some((_, x)) => *x += v,
            None => {
                col.push((i, v));
                col.sort_by_key(|&(r, _)| r);
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.cols[j].iter().find(|(r, _)| *r == i).map_or(T::zero(), |&(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn column(&self, j: usize) -> &[(usize, T)] {
        &self.cols[j]
    }

    /// Nonzero entries `(i, j, ψᵢⱼ)` in column-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.cols.iter().enumerate().flat_map(|(j, c)| c.iter().map(move |&(i, v)| (i, j, v)))
    }
}

/// Per-node constants entering the composition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeGains<T> {
    pub gamma: T,
    pub phi: T,
    pub kappa: T,
    pub mu: T,
    pub beta: T,
    pub eta: T,
}

impl<T: Scalar> From<&AugmentedConstants<T>> for NodeGains<T> {
    fn from(a: &AugmentedConstants<T>) -> Self {
        Self { gamma: a.gamma, phi: a.phi, kappa: a.kappa, mu: a.mu, beta: a.beta, eta: a.eta }
    }
}

/// `θᵢ = 1 − γᵢ` and `ψᵢⱼ = φᵢ/κⱼ` on every edge `j → i`. Repeated edges add up.
pub fn build_gain_matrices<T: Scalar>(nodes: &[NodeGains<T>], edges: &[Edge]) -> Result<(Vec<T>, GainMatrix<T>), ComposeError> {
    let n = nodes.len();
    for (k, g) in nodes.iter().enumerate() {
        if !(g.kappa > T::zero()) {
            return Err(ComposeError::InvalidInput(format!("kappa of node {k} must be positive, got {}", g.kappa)));
        }
        if !(g.gamma > T::zero() && g.gamma < T::one()) {
            return Err(ComposeError::InvalidInput(format!("gamma of node {k} must lie in (0, 1), got {}", g.gamma)));
        }
    }
    let theta = nodes.iter().map(|g| T::one() - g.gamma).collect();
    let mut psi = GainMatrix::zeros(n);
    for e in edges {
        if e.from >= n || e.to >= n {
            return Err(ComposeError::InvalidInput(format!("edge {} -> {} out of range", e.from, e.to)));
        }
        let (i, j) = (e.to, e.from);
        psi.add(i, j, nodes[i].phi / nodes[j].kappa);
    }
    Ok((theta, psi))
}

/// Components of `ξᵀ(−Θ + Ψ)`.
pub fn residuals<T: Scalar>(theta: &[T], psi: &GainMatrix<T>, xi: &[T]) -> Vec<T> {
    (0..theta.len())
        .map(|j| {
            let coupling: T = psi.column(j).iter().map(|&(i, v)| xi[i] * v).sum();
            coupling - xi[j] * theta[j]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainNetwork<T> {
    pub theta: Vec<T>,
    pub psi: GainMatrix<T>,
    pub xi: Vec<T>,
    pub nodes: Vec<NodeGains<T>>,
}

impl<T: Scalar> GainNetwork<T> {
    pub fn new(nodes: Vec<NodeGains<T>>, edges: &[Edge], xi: Vec<T>) -> Result<Self, ComposeError> {
        let (theta, psi) = build_gain_matrices(&nodes, edges)?;
        Self::from_parts(theta, psi, xi, nodes)
    }

    /// Assembles a network from matrices supplied directly.
    pub fn from_parts(theta: Vec<T>, psi: GainMatrix<T>, xi: Vec<T>, nodes: Vec<NodeGains<T>>) -> Result<Self, ComposeError> {
        let n = theta.len();
        if psi.dim() != n || xi.len() != n || nodes.len() != n {
            return Err(ComposeError::InvalidInput("theta, psi, xi and nodes must have equal size".into()));
        }
        if let Some(k) = xi.iter().position(|&v| !(v > T::zero())) {
            return Err(ComposeError::InvalidInput(format!("weight xi[{k}] must be positive")));
        }
        Ok(Self { theta, psi, xi, nodes })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallGainCheck<T> {
    /// `Γⱼ = [ξᵀ(−Θ + Ψ)]ⱼ / ξⱼ`.
    #[serde(rename = "Gamma")]
    pub gamma_i: Vec<T>,
    /// `ξⱼΓⱼ`.
    pub residuals: Vec<T>,
    pub decrease_holds: bool,
    pub levels_hold: bool,
    pub weighted_mu: T,
    pub weighted_beta: T,
}

pub fn check_small_gain<T: Scalar>(gn: &GainNetwork<T>) -> SmallGainCheck<T> {
    let r = residuals(&gn.theta, &gn.psi, &gn.xi);
    let gamma_i = r.iter().zip(&gn.xi).map(|(&r, &x)| r / x).collect();
    let weighted_mu: T = gn.nodes.iter().zip(&gn.xi).map(|(g, &x)| x * g.mu).sum();
    let weighted_beta: T = gn.nodes.iter().zip(&gn.xi).map(|(g, &x)| x * g.beta).sum();
    SmallGainCheck {
        decrease_holds: r.iter().all(|&v| v < T::zero()),
        levels_hold: weighted_beta > weighted_mu,
        gamma_i,
        residuals: r,
        weighted_mu,
        weighted_beta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightStrategy {
    Uniform,
    Iterative,
}

/// Positive weights making every residual negative, normalized to sum 1.
///
/// The iterative strategy starts uniform and scales up the weight of each
/// node whose residual is not yet negative, by the ratio of that residual to
/// the node's own contraction, then renormalizes; at most 1000 rounds.
pub fn find_weights<T: Scalar>(theta: &[T], psi: &GainMatrix<T>, strategy: WeightStrategy) -> Result<Vec<T>, ComposeError> {
    let n = theta.len();
    if n == 0 || psi.dim() != n {
        return Err(ComposeError::InvalidInput("empty or mismatched gain matrices".into()));
    }
    let mut xi = vec![T::one() / T::lit(n as f64); n];
    let worst = |xi: &[T]| residuals(theta, psi, xi).into_iter().fold(T::neg_infinity(), T::max);
    let rounds = match strategy {
        WeightStrategy::Uniform => 0,
        WeightStrategy::Iterative => 1000,
    };
    let mut best = (worst(&xi), xi.clone());
    for _ in 0..rounds {
        if best.0 < T::zero() {
            break;
        }
        let r = residuals(theta, psi, &xi);
        let margin = T::lit(0.01);
        for j in 0..n {
            let own = xi[j] * theta[j];
            if r[j] >= T::zero() && own > T::zero() {
                xi[j] *= T::one() + r[j] / own + margin;
            }
        }
        let total: T = xi.iter().copied().sum();
        xi.iter_mut().for_each(|v| *v /= total);
        let w = worst(&xi);
        if w < best.0 {
            best = (w, xi.clone());
        }
    }
    if best.0 < T::zero() {
        Ok(best.1)
    } else {
        Err(ComposeError::Infeasible { max_residual: best.0.to_f64_lossy() })
    }
}

/// Constants of the network certificate `Σ ξᵢBᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedCertificate<T> {
    pub mu: T,
    pub beta: T,
    pub eta: T,
    pub gamma: T,
    /// `maxᵢ Γᵢ`.
    #[serde(rename = "Gamma_max")]
    pub big_gamma: T,
    pub check: SmallGainCheck<T>,
    pub xi: Vec<T>,
    pub notes: Vec<String>,
}

/// Composes a network whose small-gain conditions hold. `Γ` is taken as
/// `maxᵢ Γᵢ` itself rather than a value strictly between it and zero.
pub fn compose_acbc<T: Scalar>(gn: &GainNetwork<T>) -> Result<ComposedCertificate<T>, ComposeError> {
    let check = check_small_gain(gn);
    if !(check.decrease_holds && check.levels_hold) {
        return Err(ComposeError::ConditionsFail { decrease: check.decrease_holds, levels: check.levels_hold });
    }
    let big_gamma = check.gamma_i.iter().copied().fold(T::neg_infinity(), T::max);
    let gamma = T::one() + big_gamma;
    if !(gamma > T::zero() && gamma < T::one()) {
        return Err(ComposeError::RateOutOfRange(gamma.to_f64_lossy()));
    }
    let eta: T = gn.nodes.iter().zip(&gn.xi).map(|(g, &x)| x * g.eta).sum();
    Ok(ComposedCertificate {
        mu: check.weighted_mu,
        beta: check.weighted_beta,
        eta,
        gamma,
        big_gamma,
        xi: gn.xi.clone(),
        notes: vec!["Gamma is taken as the maximum of the per-node Gamma_i (closure of the strict bound)".into()],
        check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> Vec<Edge> {
        (0..n)
            .flat_map(|i| [Edge { from: (i + n - 1) % n, to: i }, Edge { from: (i + 1) % n, to: i }])
            .collect()
    }

    fn node(gamma: f64, phi: f64, kappa: f64) -> NodeGains<f64> {
        NodeGains { gamma, phi, kappa, mu: 0.13, beta: 4.4, eta: 0.0012 }
    }

    #[test]
    fn single_node_is_identity() {
        let g = GainNetwork::new(vec![node(0.99, 1e-5, 0.005)], &[], vec![1.0]).unwrap();
        assert_eq!(g.psi.nnz(), 0);
        let c = compose_acbc(&g).unwrap();
        assert!((c.gamma - 0.99).abs() < 1e-15);
        assert_eq!((c.mu, c.beta, c.eta), (0.13, 4.4, 0.0012));
    }

    #[test]
    fn ring_entries_and_residuals() {
        let nodes = vec![node(0.99, 1e-5, 0.005); 1000];
        let (theta, psi) = build_gain_matrices(&nodes, &ring(1000)).unwrap();
        assert_eq!(psi.nnz(), 2000);
        assert!((psi.get(0, 1) - 0.002).abs() < 1e-18);
        assert_eq!(psi.get(0, 0), 0.0);
        let r = residuals(&theta, &psi, &vec![0.001; 1000]);
        assert!(r.iter().all(|v| (v + 6e-6).abs() < 1e-12));
    }

    #[test]
    fn chain_rows() {
        let nodes = vec![node(0.99, 1e-5, 0.005); 3];
        let edges = [Edge { from: 1, to: 0 }, Edge { from: 0, to: 1 }, Edge { from: 2, to: 1 }, Edge { from: 1, to: 2 }];
        let (_, psi) = build_gain_matrices(&nodes, &edges).unwrap();
        let row = |i: usize| (0..3).filter(|&j| psi.get(i, j) != 0.0).count();
        assert_eq!((row(0), row(1), row(2)), (1, 2, 1));
    }

    #[test]
    fn weight_search() {
        let theta = vec![0.01; 5];
        let xi = find_weights(&theta, &GainMatrix::zeros(5), WeightStrategy::Uniform).unwrap();
        assert_eq!(xi, vec![0.2; 5]);

        let nodes = vec![node(0.999, 1e-5, 0.005); 10];
        let (theta, psi) = build_gain_matrices(&nodes, &ring(10)).unwrap();
        assert!(matches!(find_weights(&theta, &psi, WeightStrategy::Iterative), Err(ComposeError::Infeasible { .. })));
    }

    #[test]
    fn iterative_weights_fix_an_unbalanced_chain() {
        // node 0 feeds node 1 strongly; uniform weights fail at column 0
        let nodes = vec![node(0.99, 1e-5, 0.005), node(0.9, 1e-4, 0.005)];
        let (theta, psi) = build_gain_matrices(&nodes, &[Edge { from: 0, to: 1 }]).unwrap();
        assert!(find_weights(&theta, &psi, WeightStrategy::Uniform).is_err());
        let xi = find_weights(&theta, &psi, WeightStrategy::Iterative).unwrap();
        assert!(residuals(&theta, &psi, &xi).iter().all(|&r| r < 0.0));
    }
}
