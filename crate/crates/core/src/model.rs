//! Subsystem and network data model, JSON ingestion and validation.
//!
//! Variable roles come from the boxes: the variables of `X` are the state,
//! those of `U` the inputs, those of `W` the disturbances. Any other variable
//! appearing in the jump map (or named in `noise_moments`) is jump noise.
//! Neighbor states are bound to disturbances in edge order: the incoming
//! edges of node `i`, as listed in the document, fill `W_i` left to right.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::gaussian_moments;
use crate::{Poly, Region};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ModelError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid { path: path.into(), message: message.into() }
    }

    pub fn path(&self) -> &str {
        match self {
            Self::Parse { path, .. } | Self::Invalid { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boxes {
    #[serde(rename = "X")]
    pub x: Region,
    #[serde(rename = "X0")]
    pub x0: Region,
    #[serde(rename = "Xu")]
    pub xu: Region,
    #[serde(rename = "U", default = "Region::empty")]
    pub u: Region,
    #[serde(rename = "W", default = "Region::empty")]
    pub w: Region,
}

/// Document form of one subsystem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub f1: Vec<Poly>,
    #[serde(default)]
    pub sigma: Vec<Vec<Poly>>,
    #[serde(default)]
    pub rho: Vec<Vec<Poly>>,
    #[serde(default)]
    pub lambda: Vec<f64>,
    pub f2: Vec<Poly>,
    pub tau: f64,
    pub eps1: u32,
    pub eps2: u32,
    #[serde(default)]
    pub noise_moments: BTreeMap<String, Vec<f64>>,
    pub boxes: Boxes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    subsystems: Vec<SubsystemDoc>,
    #[serde(default)]
    edges: Vec<Edge>,
}

/// One stochastic hybrid subsystem with all polynomials aligned to its
/// variable lists: flow maps over `(x, ν, w)`, the jump map over `(x, ν, w, ς)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    pub name: Option<String>,
    pub f1: Vec<Poly>,
    /// `n × b` diffusion matrix.
    pub sigma: Vec<Vec<Poly>>,
    /// `n × r` reset matrix; column `j` fires at rate `lambda[j]`.
    pub rho: Vec<Vec<Poly>>,
    pub lambda: Vec<f64>,
    pub f2: Vec<Poly>,
    pub tau: f64,
    pub eps1: u32,
    pub eps2: u32,
    pub noise_moments: BTreeMap<String, Vec<f64>>,
    pub boxes: Boxes,
    state_vars: Vec<String>,
    input_vars: Vec<String>,
    dist_vars: Vec<String>,
    noise_vars: Vec<String>,
}

fn push_unique(out: &mut Vec<String>, v: &str) {
    if !out.iter().any(|o| o == v) {
        out.push(v.to_string());
    }
}

fn align_all(polys: &[Poly], vars: &[String], path: &str) -> Result<Vec<Poly>, ModelError> {
    polys
        .iter()
        .enumerate()
        .map(|(i, p)| p.align_to(vars).map_err(|e| ModelError::invalid(format!("{path}[{i}]"), e.to_string())))
        .collect()
}

fn align_matrix(m: &[Vec<Poly>], n: usize, vars: &[String], path: &str) -> Result<Vec<Vec<Poly>>, ModelError> {
    if m.is_empty() {
        return Ok(vec![Vec::new(); n]);
    }
    if m.len() != n {
        return Err(ModelError::invalid(path, format!("expected {n} rows, found {}", m.len())));
    }
    let cols = m[0].len();
    m.iter()
        .enumerate()
        .map(|(r, row)| {
            if row.len() != cols {
                return Err(ModelError::invalid(
                    format!("{path}[{r}]"),
                    format!("expected {cols} columns, found {}", row.len()),
                ));
            }
            align_all(row, vars, &format!("{path}[{r}]"))
        })
        .collect()
}

impl SubsystemModel {
    pub fn from_doc(doc: SubsystemDoc) -> Result<Self, ModelError> {
        Self::from_doc_at(doc, "")
    }

    fn from_doc_at(doc: SubsystemDoc, at: &str) -> Result<Self, ModelError> {
        let p = |s: &str| format!("{at}{s}");
        let state_vars = doc.boxes.x.vars().to_vec();
        let input_vars = doc.boxes.u.vars().to_vec();
        let dist_vars = doc.boxes.w.vars().to_vec();
        let n = state_vars.len();
        if n == 0 {
            return Err(ModelError::invalid(p("boxes.X"), "state box has no variables"));
        }
        let mut role_vars: Vec<String> = Vec::new();
        for v in state_vars.iter().chain(&input_vars).chain(&dist_vars) {
            if role_vars.contains(v) {
                return Err(ModelError::invalid(p("boxes"), format!("variable {v} is used by more than one box")));
            }
            role_vars.push(v.clone());
        }
        let x0 = doc
            .boxes
            .x0
            .reorder_to(&state_vars)
            .map_err(|e| ModelError::invalid(p("boxes.X0"), e.to_string()))?;
        let xu = doc
            .boxes
            .xu
            .reorder_to(&state_vars)
            .map_err(|e| ModelError::invalid(p("boxes.Xu"), e.to_string()))?;

        if doc.f1.len() != n {
            return Err(ModelError::invalid(p("f1"), format!("expected {n} components, found {}", doc.f1.len())));
        }
        if doc.f2.len() != n {
            return Err(ModelError::invalid(p("f2"), format!("expected {n} components, found {}", doc.f2.len())));
        }
        let flow_vars = role_vars.clone();
        let f1 = align_all(&doc.f1, &flow_vars, &p("f1"))?;
        let sigma = align_matrix(&doc.sigma, n, &flow_vars, &p("sigma"))?;
        let rho = align_matrix(&doc.rho, n, &flow_vars, &p("rho"))?;
        let r = rho.first().map_or(0, Vec::len);
        if doc.lambda.len() != r {
            return Err(ModelError::invalid(
                p("lambda"),
                format!("expected {r} rates (one per reset column), found {}", doc.lambda.len()),
            ));
        }

        let mut noise_vars = Vec::new();
        for q in &doc.f2 {
            for v in q.used_vars() {
                if !role_vars.contains(&v) {
                    push_unique(&mut noise_vars, &v);
                }
            }
        }
        for (k, m) in &doc.noise_moments {
            if role_vars.contains(k) {
                return Err(ModelError::invalid(p("noise_moments"), format!("{k} is not a noise variable")));
            }
            if m.is_empty() || m[0] != 1.0 {
                return Err(ModelError::invalid(
                    format!("{at}noise_moments.{k}"),
                    "moment sequence must start with E[1] = 1",
                ));
            }
            push_unique(&mut noise_vars, k);
        }
        let jump_vars: Vec<String> = flow_vars.iter().chain(&noise_vars).cloned().collect();
        let f2 = align_all(&doc.f2, &jump_vars, &p("f2"))?;

        Ok(Self {
            name: doc.name,
            f1,
            sigma,
            rho,
            lambda: doc.lambda,
            f2,
            tau: doc.tau,
            eps1: doc.eps1,
            eps2: doc.eps2,
            noise_moments: doc.noise_moments,
            boxes: Boxes { x0, xu, ..doc.boxes },
            state_vars,
            input_vars,
            dist_vars,
            noise_vars,
        })
    }

    pub fn to_doc(&self) -> SubsystemDoc {
        SubsystemDoc {
            name: self.name.clone(),
            f1: self.f1.clone(),
            sigma: if self.sigma.iter().all(Vec::is_empty) { Vec::new() } else { self.sigma.clone() },
            rho: if self.rho.iter().all(Vec::is_empty) { Vec::new() } else { self.rho.clone() },
            lambda: self.lambda.clone(),
            f2: self.f2.clone(),
            tau: self.tau,
            eps1: self.eps1,
            eps2: self.eps2,
            noise_moments: self.noise_moments.clone(),
            boxes: self.boxes.clone(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_vars.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_vars.len()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.dist_vars.len()
    }

    pub fn state_vars(&self) -> &[String] {
        &self.state_vars
    }

    pub fn input_vars(&self) -> &[String] {
        &self.input_vars
    }

    pub fn dist_vars(&self) -> &[String] {
        &self.dist_vars
    }

    pub fn noise_vars(&self) -> &[String] {
        &self.noise_vars
    }

    /// `(x, ν, w)`, the variables of the flow maps.
    pub fn flow_vars(&self) -> Vec<String> {
        [&self.state_vars, &self.input_vars, &self.dist_vars].into_iter().flatten().cloned().collect()
    }

    /// `(x, w)`, the variables left once the controller is inlined.
    pub fn closed_vars(&self) -> Vec<String> {
        self.state_vars.iter().chain(&self.dist_vars).cloned().collect()
    }

    /// `(x, ν, w, ς)`, the variables of the jump map.
    pub fn jump_vars(&self) -> Vec<String> {
        self.flow_vars().into_iter().chain(self.noise_vars.iter().cloned()).collect()
    }

    /// `X × W`.
    pub fn closed_box(&self) -> Region {
        self.boxes.x.product(&self.boxes.w).expect("role variables are distinct")
    }

    /// Moments `E[ς^k]`, `k = 0..=max_order`; standard Gaussian unless given.
    /// `None` when a supplied sequence is too short.
    pub fn moments(&self, var: &str, max_order: u32) -> Option<Vec<f64>> {
        match self.noise_moments.get(var) {
            Some(m) if m.len() > max_order as usize => Some(m[..=max_order as usize].to_vec()),
            Some(_) => None,
            None => Some(gaussian_moments(max_order)),
        }
    }

    pub fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("node {index}"))
    }
}

/// A constraint that does not hold, with the node or edge it concerns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: Option<usize>,
    pub edge: Option<Edge>,
    pub constraint: String,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.node, self.edge) {
            (Some(n), _) => write!(f, "node {n}: ")?,
            (None, Some(e)) => write!(f, "edge {} -> {}: ", e.from, e.to)?,
            (None, None) => {}
        }
        write!(f, "{} ({})", self.constraint, self.detail)
    }
}

fn node_violation(node: usize, constraint: &str, detail: String) -> Violation {
    Violation { node: Some(node), edge: None, constraint: constraint.to_string(), detail }
}

/// Type invariants of a single subsystem.
pub fn validate_subsystem(sub: &SubsystemModel, node: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if sub.eps1 == 0 {
        out.push(node_violation(node, "eps1 >= 1", format!("eps1 = {}", sub.eps1)));
    }
    if sub.eps1 > sub.eps2 {
        out.push(node_violation(node, "eps1 <= eps2", format!("eps1 = {}, eps2 = {}", sub.eps1, sub.eps2)));
    }
    if !(sub.tau.is_finite() && sub.tau > 0.0) {
        out.push(node_violation(node, "tau > 0", format!("tau = {}", sub.tau)));
    }
    for (j, &l) in sub.lambda.iter().enumerate() {
        if !(l.is_finite() && l > 0.0) {
            out.push(node_violation(node, "lambda > 0", format!("lambda[{j}] = {l}")));
        }
    }
    if !sub.boxes.x.contains_box(&sub.boxes.x0) {
        out.push(node_violation(node, "X0 within X", "initial box is not contained in the state box".into()));
    }
    if !sub.boxes.x.contains_box(&sub.boxes.xu) {
        out.push(node_violation(node, "Xu within X", "unsafe box is not contained in the state box".into()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub subsystems: Vec<SubsystemModel>,
    pub edges: Vec<Edge>,
}

impl Network {
    pub fn new(subsystems: Vec<SubsystemModel>, edges: Vec<Edge>) -> Result<Self, ModelError> {
        let n = subsystems.len();
        for (k, e) in edges.iter().enumerate() {
            if e.from >= n || e.to >= n {
                return Err(ModelError::invalid(format!("edges[{k}]"), format!("node index out of range for {n} subsystems")));
            }
            if e.from == e.to {
                return Err(ModelError::invalid(format!("edges[{k}]"), "self-loops are not interconnections"));
            }
        }
        Ok(Self { subsystems, edges })
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }

    /// Ordered neighbor list `J_i`: sources of the edges into `i`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.to == i).map(|e| e.from).collect()
    }

    /// Offset of each neighbor's block inside `w_i`, in neighbor order.
    pub fn disturbance_blocks(&self, i: usize) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut off = 0;
        self.neighbors(i)
            .into_iter()
            .map(|j| {
                let d = self.subsystems[j].state_dim();
                let r = off..off + d;
                off += d;
                (j, r)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            subsystems: self.subsystems.iter().map(SubsystemModel::to_doc).collect(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model documents always serialize")
    }
}

/// Parses a model document. Errors carry the JSON path of the offending field.
pub fn load_network(document: &str) -> Result<Network, ModelError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let doc: NetworkDoc = serde_path_to_error::deserialize(de).map_err(|e| ModelError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let subsystems = doc
        .subsystems
        .into_iter()
        .enumerate()
        .map(|(i, s)| SubsystemModel::from_doc_at(s, &format!("subsystems[{i}].")))
        .collect::<Result<Vec<_>, _>>()?;
    Network::new(subsystems, doc.edges)
}

/// All violated invariants; empty iff the network is well formed.
///
/// Beyond per-node checks this requires each node's disturbance dimension to
/// equal the total state dimension of its neighbors, and every neighbor's
/// state box to lie inside the matching block of the disturbance box.
pub fn validate(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, sub) in net.subsystems.iter().enumerate() {
        out.extend(validate_subsystem(sub, i));
        let blocks = net.disturbance_blocks(i);
        let expected: usize = blocks.iter().map(|(_, r)| r.len()).sum();
        if expected != sub.disturbance_dim() {
            out.push(node_violation(
                i,
                "disturbance dimension",
                format!("w has {} components but neighbors provide {expected}", sub.disturbance_dim()),
            ));
            continue;
        }
        for (j, r) in blocks {
            let block = sub.boxes.w.slice(r);
            if !block.contains_box_positional(&net.subsystems[j].boxes.x) {
                out.push(Violation {
                    node: Some(i),
                    edge: Some(Edge { from: j, to: i }),
                    constraint: "X_j within W_ij".to_string(),
                    detail: format!("state box of node {j} is not contained in the disturbance block of node {i}"),
                });
            }
        }
    }
    out
}

/// State of an augmented subsystem: the physical state plus the number of
/// sampling periods since the last jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub theta: u32,
}

impl AugmentedState {
    pub fn new(x: Vec<f64>, theta: u32, eps2: u32) -> Result<Self, ModelError> {
        if theta > eps2 {
            return Err(ModelError::invalid("theta", format!("counter {theta} exceeds eps2 = {eps2}")));
        }
        Ok(Self { x, theta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> String {
        std::fs::read_to_string(format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    #[test]
    fn ring_fixture_is_valid() {
        let net = load_network(&fixture("ring10.json")).unwrap();
        assert_eq!(net.len(), 10);
        assert!(validate(&net).is_empty(), "{:?}", validate(&net));
        let s = &net.subsystems[0];
        assert_eq!(s.state_vars(), ["x"]);
        assert_eq!(s.input_vars(), ["nu"]);
        assert_eq!(s.dist_vars(), ["w1", "w2"]);
        assert_eq!(s.noise_vars(), ["s"]);
        assert_eq!(net.neighbors(0), vec![9, 1]);
        assert_eq!(net.disturbance_blocks(0), vec![(9, 0..1), (1, 1..2)]);
    }

    #[test]
    fn json_round_trip_preserves_the_network() {
        let net = load_network(&fixture("ring3_case2.json")).unwrap();
        let again = load_network(&net.to_json()).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn lone_subsystem_has_open_disturbances() {
        let net = load_network(&fixture("case1.json")).unwrap();
        assert!(validate_subsystem(&net.subsystems[0], 0).is_empty());
        let v = validate(&net);
        assert_eq!(v.len(), 1);
        assert!(v[0].constraint.contains("disturbance dimension"));
    }

    fn edit(f: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(&fixture("ring10.json")).unwrap();
        f(&mut v);
        v.to_string()
    }

    #[test]
    fn jump_window_violations_are_reported() {
        let net = load_network(&edit(|v| {
            v["subsystems"][2]["eps1"] = 9.into();
        }))
        .unwrap();
        let v = validate(&net);
        assert!(v.iter().any(|x| x.node == Some(2) && x.constraint.contains("eps1 <= eps2")), "{v:?}");
    }

    #[test]
    fn neighbor_state_must_fit_the_disturbance_box() {
        let net = load_network(&edit(|v| {
            v["subsystems"][4]["boxes"]["X"][0]["hi"] = 9.0.into();
            v["subsystems"][4]["boxes"]["Xu"][0]["hi"] = 9.0.into();
        }))
        .unwrap();
        let v = validate(&net);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().all(|x| x.edge.is_some_and(|e| e.from == 4)));
    }

    #[test]
    fn parse_errors_carry_a_path() {
        let e = load_network(&edit(|v| {
            v["subsystems"][1]["tau"] = "fast".into();
        }))
        .unwrap_err();
        assert!(e.path().contains("subsystems[1].tau"), "{e}");
        let e = load_network(&edit(|v| {
            v["subsystems"][0]["noise_moments"]["s"] = serde_json::json!([2.0, 0.0, 1.0]);
        }))
        .unwrap_err();
        assert!(e.path().contains("noise_moments"), "{e}");
    }

    #[test]
    fn self_loops_and_dangling_edges_are_rejected() {
        assert!(load_network(&edit(|v| v["edges"][0]["from"] = 0.into())).is_err());
        assert!(load_network(&edit(|v| v["edges"][0]["from"] = 10.into())).is_err());
    }

    #[test]
    fn counter_must_stay_in_window() {
        assert!(AugmentedState::new(vec![0.0], 7, 7).is_ok());
        assert!(AugmentedState::new(vec![0.0], 8, 7).is_err());
    }
}
