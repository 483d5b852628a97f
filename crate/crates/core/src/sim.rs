//! Seeded Monte Carlo simulation of a closed-loop network.
//!
//! Each sampling period every node flows for `τ` under Euler–Maruyama with
//! `substeps` steps, Gaussian Brownian increments and Poisson reset counts.
//! Its input is `ν(x(t_k))` clamped to `U` and its disturbance is the
//! neighbors' states at `t_k`, both held over the period. At the end of the
//! period the nodes whose schedule fires jump through `f₂` with fresh noise,
//! using `ν̂` and the neighbors' pre-jump states. States are recorded at every
//! `t_k`; safety is judged only there.
//!
//! Random draws happen in a fixed order: initial states, initial gaps, then
//! per period the flow increments node by node, then for each jumping node its
//! noise and its next gap. Trial `i` uses stream `i` of a ChaCha generator
//! seeded by the master seed, so results do not depend on scheduling.
//!
//! The original representation tracks the absolute step of each node's next
//! jump; the augmented one tracks the counter `ϑ` of periods since the last
//! jump. Both consume the same draws and must agree bit for bit.

use std::io::Write;

use rand::{Rng, SeedableRng};
pub use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::cbc::CertificateBundle;
use crate::model::{validate, Network, SubsystemModel};
use crate::poly::gaussian_moments;
use crate::{Poly, Region};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("network is not valid: {0}")]
    Network(String),
    #[error("controller for node {node}: {message}")]
    Controller { node: usize, message: String },
    #[error("noise variable {var} of node {node} is not standard Gaussian; only Gaussian noise can be simulated")]
    UnsupportedNoise { node: usize, var: String },
    #[error("all {0} trials left the state set")]
    AllEscaped(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpSchedule {
    /// Every gap is `ε₂` periods.
    AtEps2,
    /// Gaps drawn uniformly from `{ε₁, …, ε₂}`.
    UniformWindow,
    /// Every gap is the given number of periods.
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Original,
    Augmented,
}

/// Which recorded states count as unsafe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnsafeEvent {
    /// Every node inside its unsafe box at once (the product set).
    AllNodes,
    /// At least one node inside its unsafe box.
    AnyNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Each node uniform on its `X0`.
    UniformX0,
    /// One state vector per node.
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub substeps: u32,
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    pub schedule: JumpSchedule,
    /// All nodes share one jump schedule.
    pub synchronized: bool,
    pub representation: Representation,
    pub unsafe_event: UnsafeEvent,
    pub initial: InitialState,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            substeps: 20,
            horizon: 100,
            trials: 1000,
            seed: 0,
            schedule: JumpSchedule::UniformWindow,
            synchronized: false,
            representation: Representation::Augmented,
            unsafe_event: UnsafeEvent::AllNodes,
            initial: InitialState::UniformX0,
        }
    }
}

/// Flow and jump controllers, one vector of polynomials in the state per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Controllers {
    pub flow: Vec<Vec<Poly>>,
    pub jump: Vec<Vec<Poly>>,
}

impl Controllers {
    pub fn from_bundles(bundles: &[CertificateBundle]) -> Self {
        Self {
            flow: bundles.iter().map(|b| b.nu_flow.clone()).collect(),
            jump: bundles.iter().map(|b| b.nu_jump.clone()).collect(),
        }
    }
}

/// Shift applied to one Brownian increment, for sensitivity checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub period: u64,
    pub node: usize,
    pub substep: u32,
    pub component: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `states[k][node]` is the state at `t_k`.
    pub states: Vec<Vec<Vec<f64>>>,
    /// `counters[k][node]` is `ϑ` at `t_k` (augmented representation only).
    pub counters: Option<Vec<Vec<u32>>>,
    /// Periods at which each node jumped.
    pub jumps: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub unsafe_hit: bool,
    pub first_hit_step: Option<u64>,
    pub escaped: bool,
    pub escape_step: Option<u64>,
    pub trajectory: Option<Trajectory>,
}

struct NodeKernel {
    n: usize,
    m: usize,
    p: usize,
    q: usize,
    f1: Vec<Poly>,
    sigma: Vec<Vec<Poly>>,
    rho: Vec<Vec<Poly>>,
    poisson: Vec<Poisson<f64>>,
    f2: Vec<Poly>,
    nu_flow: Vec<Poly>,
    nu_jump: Vec<Poly>,
    u: Region,
    x: Region,
    x0: Region,
    xu: Region,
    eps1: u32,
    eps2: u32,
    /// `(neighbor, offset in w)`
    blocks: Vec<(usize, usize)>,
}

/// A network compiled for simulation.
pub struct Simulator {
    nodes: Vec<NodeKernel>,
    tau: f64,
    dt: f64,
    cfg: SimConfig,
}

fn gaussian_like(m: &[f64]) -> bool {
    let g: Vec<f64> = gaussian_moments(m.len().saturating_sub(1) as u32);
    m.iter().zip(&g).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0))
}

impl Simulator {
    pub fn new(net: &Network, ctrl: &Controllers, cfg: &SimConfig) -> Result<Self, SimError> {
        if cfg.substeps == 0 || cfg.trials == 0 {
            return Err(SimError::Config("substeps and trials must be at least 1".into()));
        }
        let violations = validate(net);
        if let Some(v) = violations.first() {
            return Err(SimError::Network(v.to_string()));
        }
        if net.is_empty() {
            return Err(SimError::Network("no subsystems".into()));
        }
        let tau = net.subsystems[0].tau;
        if net.subsystems.iter().any(|s| s.tau != tau) {
            return Err(SimError::Config("all subsystems must share the sampling period".into()));
        }
        if ctrl.flow.len() != net.len() || ctrl.jump.len() != net.len() {
            return Err(SimError::Config(format!("expected controllers for {} nodes", net.len())));
        }
        if cfg.synchronized {
            let (e1, e2) = (net.subsystems[0].eps1, net.subsystems[0].eps2);
            if net.subsystems.iter().any(|s| (s.eps1, s.eps2) != (e1, e2)) {
                return Err(SimError::Config("synchronized jumps need a common jump window".into()));
            }
        }
        if let InitialState::Fixed(x0) = &cfg.initial {
            if x0.len() != net.len() || x0.iter().zip(&net.subsystems).any(|(v, s)| v.len() != s.state_dim()) {
                return Err(SimError::Config("fixed initial state has the wrong shape".into()));
            }
        }
        let dt = tau / cfg.substeps as f64;
        let mut nodes = Vec::with_capacity(net.len());
        for (i, s) in net.subsystems.iter().enumerate() {
            if let JumpSchedule::Fixed(t) = cfg.schedule {
                if t < s.eps1 || t > s.eps2 {
                    return Err(SimError::Config(format!("fixed gap {t} outside [{}, {}] at node {i}", s.eps1, s.eps2)));
                }
            }
            for v in s.noise_vars() {
                if let Some(m) = s.noise_moments.get(v) {
                    if !gaussian_like(m) {
                        return Err(SimError::UnsupportedNoise { node: i, var: v.clone() });
                    }
                }
            }
            nodes.push(compile_node(i, s, net, ctrl, dt)?);
        }
        Ok(Self { nodes, tau, dt, cfg: cfg.clone() })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// One flow period of `node` from `x` with its disturbance held at `w`
    /// and the flow controller applied.
    pub fn flow_step(&self, node: usize, x: &[f64], w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let k = &self.nodes[node];
        let nu = k.control(&k.nu_flow, x);
        let mut out = x.to_vec();
        k.flow(&mut out, &nu, w, self.dt, self.cfg.substeps, rng, &mut Vec::new(), None);
        out
    }

    /// One jump of `node` from `x` under disturbance `w` and the jump controller.
    pub fn jump_step(&self, node: usize, x: &[f64], w: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let k = &self.nodes[node];
        let nu = k.control(&k.nu_jump, x);
        let mut out = x.to_vec();
        k.jump(&mut out, x, &nu, w, rng, &mut Vec::new());
        out
    }

    fn draw_gap(&self, node: usize, rng: &mut ChaCha8Rng) -> u32 {
        let k = &self.nodes[node];
        match self.cfg.schedule {
            JumpSchedule::AtEps2 => k.eps2,
            JumpSchedule::Fixed(t) => t,
            JumpSchedule::UniformWindow => rng.random_range(k.eps1..=k.eps2),
        }
    }

    fn in_unsafe(&self, xs: &[Vec<f64>]) -> bool {
        let inside = |(k, x): (&NodeKernel, &Vec<f64>)| k.xu.contains_point(x);
        match self.cfg.unsafe_event {
            UnsafeEvent::AllNodes => self.nodes.iter().zip(xs).all(inside),
            UnsafeEvent::AnyNode => self.nodes.iter().zip(xs).any(inside),
        }
    }

    fn escaped(&self, xs: &[Vec<f64>]) -> bool {
        self.nodes.iter().zip(xs).any(|(k, x)| !k.x.contains_point(x) || x.iter().any(|v| !v.is_finite()))
    }

    /// Runs trial `trial`. With `record`, the full trajectory is kept and the
    /// run continues past the first unsafe hit.
    pub fn run_trial(&self, trial: u64, record: bool, perturb: Option<Perturbation>) -> TrialResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(trial);
        let nn = self.nodes.len();
        let augmented = self.cfg.representation == Representation::Augmented;

        let mut x: Vec<Vec<f64>> = match &self.cfg.initial {
            InitialState::Fixed(v) => v.clone(),
            InitialState::UniformX0 => self
                .nodes
                .iter()
                .map(|k| (0..k.n).map(|c| {
                    let (lo, hi) = k.x0.interval(c);
                    lo + (hi - lo) * rng.random::<f64>()
                }).collect())
                .collect(),
        };

        // schedule state: gap targets and counters, or absolute jump steps
        let mut gaps = vec![0u32; nn];
        if self.cfg.synchronized {
            let g = self.draw_gap(0, &mut rng);
            gaps.fill(g);
        } else {
            for (i, g) in gaps.iter_mut().enumerate() {
                *g = self.draw_gap(i, &mut rng);
            }
        }
        let mut theta = vec![0u32; nn];
        let mut next_jump: Vec<u64> = gaps.iter().map(|&g| g as u64).collect();

        let mut out = TrialResult { unsafe_hit: false, first_hit_step: None, escaped: false, escape_step: None, trajectory: None };
        let mut traj = record.then(|| Trajectory {
            states: vec![x.clone()],
            counters: augmented.then(|| vec![theta.clone()]),
            jumps: vec![Vec::new(); nn],
        });

        if self.escaped(&x) {
            out.escaped = true;
            out.escape_step = Some(0);
            out.trajectory = traj;
            return out;
        }
        if self.in_unsafe(&x) {
            out.unsafe_hit = true;
            out.first_hit_step = Some(0);
            if !record {
                return out;
            }
        }

        let mut held_w: Vec<Vec<f64>> = self.nodes.iter().map(|k| vec![0.0; k.p]).collect();
        let mut point: Vec<f64> = Vec::new();
        let mut firing = vec![false; nn];

        for k in 0..self.cfg.horizon {
            for (i, node) in self.nodes.iter().enumerate() {
                for &(j, off) in &node.blocks {
                    let nj = self.nodes[j].n;
                    held_w[i][off..off + nj].copy_from_slice(&x[j]);
                }
            }
            for (i, node) in self.nodes.iter().enumerate() {
                let nu = node.control(&node.nu_flow, &x[i]);
                let pert = perturb.filter(|p| p.period == k && p.node == i);
                node.flow(&mut x[i], &nu, &held_w[i], self.dt, self.cfg.substeps, &mut rng, &mut point, pert);
            }

            for i in 0..nn {
                firing[i] = if augmented {
                    theta[i] += 1;
                    theta[i] == gaps[i]
                } else {
                    next_jump[i] == k + 1
                };
            }
            if firing.iter().any(|&f| f) {
                let pre = x.clone();
                let mut shared_gap = None;
                for i in 0..nn {
                    if !firing[i] {
                        continue;
                    }
                    let node = &self.nodes[i];
                    let mut w = vec![0.0; node.p];
                    for &(j, off) in &node.blocks {
                        w[off..off + self.nodes[j].n].copy_from_slice(&pre[j]);
                    }
                    let nu = node.control(&node.nu_jump, &pre[i]);
                    node.jump(&mut x[i], &pre[i], &nu, &w, &mut rng, &mut point);
                    let g = if self.cfg.synchronized {
                        *shared_gap.get_or_insert_with(|| self.draw_gap(0, &mut rng))
                    } else {
                        self.draw_gap(i, &mut rng)
                    };
                    gaps[i] = g;
                    theta[i] = 0;
                    next_jump[i] = k + 1 + g as u64;
                    if let Some(t) = traj.as_mut() {
                        t.jumps[i].push(k + 1);
                    }
                }
            }

            if let Some(t) = traj.as_mut() {
                t.states.push(x.clone());
                if let Some(c) = t.counters.as_mut() {
                    c.push(theta.clone());
                }
            }
            if self.escaped(&x) {
                out.escaped = true;
                out.escape_step = Some(k + 1);
                break;
            }
            if !out.unsafe_hit && self.in_unsafe(&x) {
                out.unsafe_hit = true;
                out.first_hit_step = Some(k + 1);
                if !record {
                    break;
                }
            }
        }
        out.trajectory = traj;
        out
    }
}

fn compile_node(i: usize, s: &SubsystemModel, net: &Network, ctrl: &Controllers, dt: f64) -> Result<NodeKernel, SimError> {
    let align = |nu: &[Poly]| -> Result<Vec<Poly>, SimError> {
        if nu.len() != s.input_dim() {
            return Err(SimError::Controller { node: i, message: format!("expected {} components, found {}", s.input_dim(), nu.len()) });
        }
        nu.iter()
            .map(|q| q.align_to(s.state_vars()).map_err(|e| SimError::Controller { node: i, message: e.to_string() }))
            .collect()
    };
    let poisson = s
        .lambda
        .iter()
        .map(|&l| Poisson::new(l * dt).map_err(|e| SimError::Config(format!("rate {l} at node {i}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NodeKernel {
        n: s.state_dim(),
        m: s.input_dim(),
        p: s.disturbance_dim(),
        q: s.noise_vars().len(),
        f1: s.f1.clone(),
        sigma: s.sigma.clone(),
        rho: s.rho.clone(),
        poisson,
        f2: s.f2.clone(),
        nu_flow: align(&ctrl.flow[i])?,
        nu_jump: align(&ctrl.jump[i])?,
        u: s.boxes.u.clone(),
        x: s.boxes.x.clone(),
        x0: s.boxes.x0.clone(),
        xu: s.boxes.xu.clone(),
        eps1: s.eps1,
        eps2: s.eps2,
        blocks: net.disturbance_blocks(i).into_iter().map(|(j, r)| (j, r.start)).collect(),
    })
}

impl NodeKernel {
    fn control(&self, nu: &[Poly], x: &[f64]) -> Vec<f64> {
        nu.iter()
            .enumerate()
            .map(|(c, q)| {
                let (lo, hi) = self.u.interval(c);
                q.eval_unchecked(x).clamp(lo, hi)
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn flow(
        &self,
        x: &mut [f64],
        nu: &[f64],
        w: &[f64],
        dt: f64,
        substeps: u32,
        rng: &mut ChaCha8Rng,
        point: &mut Vec<f64>,
        perturb: Option<Perturbation>,
    ) {
        let b = self.sigma.first().map_or(0, Vec::len);
        let r = self.poisson.len();
        let sq = dt.sqrt();
        let mut dw = vec![0.0; b];
        let mut dp = vec![0.0; r];
        let mut dx = vec![0.0; self.n];
        for step in 0..substeps {
            for (c, v) in dw.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * sq;
                if let Some(p) = perturb.filter(|p| p.substep == step && p.component == c) {
                    *v += p.delta;
                }
            }
            for (v, d) in dp.iter_mut().zip(&self.poisson) {
                *v = d.sample(rng);
            }
            point.clear();
            point.extend_from_slice(x);
            point.extend_from_slice(nu);
            point.extend_from_slice(w);
            for (a, d) in dx.iter_mut().enumerate() {
                let mut v = self.f1[a].eval_unchecked(point) * dt;
                for (c, z) in dw.iter().enumerate() {
                    v += self.sigma[a][c].eval_unchecked(point) * z;
                }
                for (c, z) in dp.iter().enumerate() {
                    if *z != 0.0 {
                        v += self.rho[a][c].eval_unchecked(point) * z;
                    }
                }
                *d = v;
            }
            for (xa, d) in x.iter_mut().zip(&dx) {
                *xa += d;
            }
        }
    }

    fn jump(&self, x: &mut [f64], pre: &[f64], nu: &[f64], w: &[f64], rng: &mut ChaCha8Rng, point: &mut Vec<f64>) {
        point.clear();
        point.extend_from_slice(pre);
        point.extend_from_slice(nu);
        point.extend_from_slice(w);
        for _ in 0..self.q {
            let z: f64 = StandardNormal.sample(rng);
            point.push(z);
        }
        debug_assert_eq!(point.len(), self.n + self.m + self.p + self.q);
        for (a, xa) in x.iter_mut().enumerate() {
            *xa = self.f2[a].eval_unchecked(point);
        }
    }
}

pub fn simulate_trajectory(net: &Network, ctrl: &Controllers, cfg: &SimConfig, trial: u64) -> Result<TrialResult, SimError> {
    Ok(Simulator::new(net, ctrl, cfg)?.run_trial(trial, true, None))
}

/// Upper end of the two-sided 95% Clopper–Pearson interval.
pub fn clopper_pearson_upper(hits: u64, trials: u64) -> f64 {
    if trials == 0 || hits >= trials {
        return 1.0;
    }
    let (a, b) = ((hits + 1) as f64, (trials - hits) as f64);
    let (mut lo, mut hi) = (hits as f64 / trials as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < 0.975 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub trials: u64,
    pub hits: u64,
    pub escapes: u64,
    pub p_hat: f64,
    pub ci95_upper: f64,
    /// Earliest unsafe step over all trials.
    pub earliest_hit: Option<u64>,
}

pub fn estimate_unsafe_probability(net: &Network, ctrl: &Controllers, cfg: &SimConfig) -> Result<Estimate, SimError> {
    let sim = Simulator::new(net, ctrl, cfg)?;
    let results: Vec<TrialResult> = (0..cfg.trials).into_par_iter().map(|t| sim.run_trial(t, false, None)).collect();
    let escapes = results.iter().filter(|r| r.escaped && !r.unsafe_hit).count() as u64;
    let hits = results.iter().filter(|r| r.unsafe_hit).count() as u64;
    let valid = cfg.trials - escapes;
    if valid == 0 {
        return Err(SimError::AllEscaped(cfg.trials));
    }
    Ok(Estimate {
        trials: cfg.trials,
        hits,
        escapes,
        p_hat: hits as f64 / valid as f64,
        ci95_upper: clopper_pearson_upper(hits, valid),
        earliest_hit: results.iter().filter_map(|r| r.first_hit_step).min(),
    })
}

/// Runs trial 0 in both representations from `seed` and compares every
/// recorded state bitwise. `perturb` is applied to the augmented run only.
pub fn equivalence_check(
    net: &Network,
    ctrl: &Controllers,
    cfg: &SimConfig,
    seed: u64,
    perturb: Option<Perturbation>,
) -> Result<bool, SimError> {
    let mut c = cfg.clone();
    c.seed = seed;
    c.representation = Representation::Original;
    let orig = Simulator::new(net, ctrl, &c)?.run_trial(0, true, None);
    c.representation = Representation::Augmented;
    let aug = Simulator::new(net, ctrl, &c)?.run_trial(0, true, perturb);
    let (a, b) = (orig.trajectory.expect("recorded"), aug.trajectory.expect("recorded"));
    let same_states = a.states.len() == b.states.len()
        && a.states.iter().flatten().flatten().zip(b.states.iter().flatten().flatten()).all(|(u, v)| u.to_bits() == v.to_bits());
    Ok(same_states && a.jumps == b.jumps && orig.unsafe_hit == aug.unsafe_hit && orig.escaped == aug.escaped)
}

/// Writes `trial,k,node,x[,theta]` rows, one per state component.
pub fn write_trajectory_csv<W: Write>(out: &mut W, trials: &[(u64, &Trajectory)]) -> Result<(), SimError> {
    let with_theta = trials.iter().any(|(_, t)| t.counters.is_some());
    writeln!(out, "{}", if with_theta { "trial,k,node,x,theta" } else { "trial,k,node,x" })?;
    for (trial, t) in trials {
        for (k, xs) in t.states.iter().enumerate() {
            for (node, x) in xs.iter().enumerate() {
                for v in x {
                    match &t.counters {
                        Some(c) => writeln!(out, "{trial},{k},{node},{v},{}", c[k][node])?,
                        None if with_theta => writeln!(out, "{trial},{k},{node},{v},")?,
                        None => writeln!(out, "{trial},{k},{node},{v}")?,
                    }
                }
            }
        }
    }
    Ok(())
}
