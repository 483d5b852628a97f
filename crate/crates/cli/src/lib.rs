//! `shs-safe`: batch front end for per-subsystem barrier verification,
//! calibration, augmentation, small-gain composition, safety bounds and
//! Monte Carlo cross-checks.
//!
//! Exit codes: 0 success, 1 input error, 2 a condition was falsified or the
//! composition failed, 3 the prover could not decide.

mod report;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use shs_safe_core::certify::ProverConfig;
use shs_safe_core::model::{validate, validate_subsystem, Network};
use shs_safe_core::sim::{
    equivalence_check, write_trajectory_csv, Controllers, InitialState, JumpSchedule, Representation, SimConfig, Simulator,
    UnsafeEvent,
};

pub use report::{InputDigest, Report};
use report::Inputs;
use stages::{GainDoc, Status, Weights};

#[derive(Parser, Debug)]
#[command(name = "shs-safe", version, about = "Compositional safety certificates for interconnected stochastic hybrid systems")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the timestamp so reports are byte-for-byte reproducible.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Use the certificate constants as given, and report falsified
    /// conditions as warnings instead of failing.
    #[arg(long, global = true)]
    strict_paper: bool,
    /// Report path (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every barrier condition of each subsystem.
    Verify {
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        prover: ProverFlags,
    },
    /// Recompute tight constants for the given barriers and controllers.
    Calibrate {
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        prover: ProverFlags,
        #[command(flatten)]
        cal: CalibrationFlags,
    },
    /// Build augmented certificates over the jump counter.
    Augment {
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        aug: AugmentFlags,
    },
    /// Compose augmented certificates under the small-gain condition.
    Compose {
        /// Augment report, or `{"gains": [...], "edges": [...], "xi": [...]}`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        weights: Weights,
    },
    /// Probability that the composed certificate reaches its unsafe level.
    Bound {
        /// Compose or pipeline report to read the constants from.
        #[arg(long, conflicts_with_all = ["mu", "beta", "eta", "gamma"])]
        input: Option<PathBuf>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[command(flatten)]
        horizon: HorizonFlags,
        #[command(flatten)]
        claim: ClaimFlags,
    },
    /// Estimate the unsafe probability by Monte Carlo.
    Simulate {
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        sim: SimFlags,
        /// Also check that the original and augmented representations give
        /// identical trajectories for this many seeds.
        #[arg(long, default_value_t = 0)]
        equivalence_seeds: u64,
    },
    /// verify/calibrate, augment, compose, bound and simulate in one run.
    Pipeline {
        #[command(flatten)]
        input: ModelInput,
        #[command(flatten)]
        prover: ProverFlags,
        #[command(flatten)]
        cal: CalibrationFlags,
        #[command(flatten)]
        aug: AugmentFlags,
        #[arg(long, value_enum, default_value = "auto")]
        weights: Weights,
        #[command(flatten)]
        claim: ClaimFlags,
        #[command(flatten)]
        sim: SimFlags,
        /// Stop after the bound.
        #[arg(long)]
        no_simulate: bool,
    },
}

#[derive(Args, Debug)]
struct ModelInput {
    #[arg(long)]
    model: PathBuf,
    /// Certificate bundle, array of bundles (one per subsystem), or a
    /// calibrate/pipeline report.
    #[arg(long)]
    cert: PathBuf,
}

#[derive(Args, Debug)]
struct ProverFlags {
    /// Slack tolerated below zero before a condition counts as violated.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 30)]
    max_depth: i64,
    #[arg(long, default_value_t = ProverConfig::default().max_boxes)]
    max_boxes: usize,
    /// Highest total degree the prover accepts.
    #[arg(long, default_value_t = ProverConfig::default().degree_cap)]
    degree_cap: u32,
}

impl ProverFlags {
    fn args(&self) -> stages::ProverArgs {
        stages::ProverArgs {
            tol: self.tol,
            max_depth: self.max_depth,
            cfg: ProverConfig { max_boxes: self.max_boxes, degree_cap: self.degree_cap, ..ProverConfig::default() },
        }
    }
}

#[derive(Args, Debug)]
struct CalibrationFlags {
    /// Accuracy of the calibrated level constants and offsets.
    #[arg(long, default_value_t = 1e-4)]
    cal_tol: f64,
    /// Fix the flow rate instead of keeping the certificate's.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Fix the jump rate instead of keeping the certificate's.
    #[arg(long)]
    gamma2: Option<f64>,
    /// Search both rates instead of keeping the certificate's.
    #[arg(long)]
    optimize_gammas: bool,
}

#[derive(Args, Debug)]
struct AugmentFlags {
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
}

#[derive(Args, Debug)]
struct HorizonFlags {
    /// Number of sampling periods.
    #[arg(long, default_value_t = 100)]
    horizon: u64,
    /// Bound over an unbounded horizon (needs eta = 0).
    #[arg(long)]
    infinite: bool,
}

#[derive(Args, Debug)]
struct ClaimFlags {
    /// Claimed safety probability to compare against.
    #[arg(long)]
    claim: Option<f64>,
    #[arg(long, default_value_t = 5e-4)]
    claim_tol: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleKind {
    UniformWindow,
    AtEps2,
    Fixed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EventKind {
    /// All subsystems inside their unsafe sets at once.
    All,
    /// Any subsystem inside its unsafe set.
    Any,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReprKind {
    Original,
    Augmented,
}

#[derive(Args, Debug)]
struct SimFlags {
    #[arg(long, default_value_t = 100)]
    horizon: u64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    substeps: u32,
    #[arg(long, value_enum, default_value = "uniform-window")]
    schedule: ScheduleKind,
    /// Gap for `--schedule fixed`.
    #[arg(long)]
    gap: Option<u32>,
    /// All subsystems share one jump schedule.
    #[arg(long)]
    synchronized: bool,
    #[arg(long, value_enum, default_value = "all")]
    unsafe_event: EventKind,
    #[arg(long, value_enum, default_value = "augmented")]
    representation: ReprKind,
    /// Start every subsystem at this state (comma-separated) instead of
    /// sampling `X0`.
    #[arg(long, value_delimiter = ',')]
    x0: Option<Vec<f64>>,
    /// Write the first `--record` trajectories to this CSV file.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    record: u64,
}

impl SimFlags {
    fn config(&self, net: &Network) -> Result<SimConfig> {
        let schedule = match (self.schedule, self.gap) {
            (ScheduleKind::Fixed, Some(g)) => JumpSchedule::Fixed(g),
            (ScheduleKind::Fixed, None) => bail!("--schedule fixed needs --gap"),
            (_, Some(_)) => bail!("--gap only applies to --schedule fixed"),
            (ScheduleKind::UniformWindow, None) => JumpSchedule::UniformWindow,
            (ScheduleKind::AtEps2, None) => JumpSchedule::AtEps2,
        };
        let initial = match &self.x0 {
            None => InitialState::UniformX0,
            Some(v) => InitialState::Fixed(vec![v.clone(); net.len()]),
        };
        Ok(SimConfig {
            substeps: self.substeps,
            horizon: self.horizon,
            trials: self.trials,
            seed: self.seed,
            schedule,
            synchronized: self.synchronized,
            representation: match self.representation {
                ReprKind::Original => Representation::Original,
                ReprKind::Augmented => Representation::Augmented,
            },
            unsafe_event: match self.unsafe_event {
                EventKind::All => UnsafeEvent::AllNodes,
                EventKind::Any => UnsafeEvent::AnyNode,
            },
            initial,
        })
    }

    fn write_csv(&self, net: &Network, certs: &[shs_safe_core::cbc::CertificateBundle], cfg: &SimConfig) -> Result<()> {
        let Some(path) = &self.csv else { return Ok(()) };
        let sim = Simulator::new(net, &Controllers::from_bundles(certs), cfg)?;
        let runs: Vec<_> = (0..self.record.min(cfg.trials)).map(|t| (t, sim.run_trial(t, true, None))).collect();
        let trajs: Vec<_> = runs.iter().filter_map(|(t, r)| r.trajectory.as_ref().map(|tr| (*t, tr))).collect();
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        write_trajectory_csv(&mut file, &trajs)?;
        Ok(())
    }
}

struct Outcome {
    status: Status,
    warnings: Vec<String>,
    result: Value,
}

/// Loads a model. Per-subsystem constraints always apply; the interconnection
/// constraints (neighbor states filling each disturbance box) only with
/// `closed`, since a lone subsystem with open disturbance inputs can still be
/// verified, augmented and composed.
fn checked_network(inputs: &mut Inputs, path: &std::path::Path, closed: bool) -> Result<Network> {
    let net = inputs.network(path)?;
    let violations = if closed {
        validate(&net)
    } else {
        net.subsystems.iter().enumerate().flat_map(|(i, s)| validate_subsystem(s, i)).collect()
    };
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!("model {} violates: {}", path.display(), list.join("; "));
    }
    Ok(net)
}

fn network_summary(net: &Network) -> Value {
    json!({
        "subsystems": net.len(),
        "edges": net.edges.len(),
        "names": net.subsystems.iter().enumerate().map(|(i, s)| s.label(i)).collect::<Vec<_>>(),
    })
}

fn calibration_args(cal: &CalibrationFlags, prover: &ProverFlags) -> stages::CalibrateArgs {
    stages::CalibrateArgs {
        tol: cal.cal_tol,
        gamma1: cal.gamma1,
        gamma2: cal.gamma2,
        optimize_gammas: cal.optimize_gammas,
        proof_tol: prover.tol,
        max_depth: prover.max_depth,
    }
}

fn augment_args(a: &AugmentFlags) -> stages::AugmentArgs {
    stages::AugmentArgs { alpha1: a.alpha1, alpha2: a.alpha2 }
}

fn execute(cli: &Cli, inputs: &mut Inputs) -> Result<Outcome> {
    let mut warnings = Vec::new();
    let strict = cli.strict_paper;
    match &cli.command {
        Command::Verify { input, prover } => {
            let net = checked_network(inputs, &input.model, false)?;
            let certs = inputs.certificates(&input.cert, net.len())?;
            let rows = stages::verify(&net, &certs, &prover.args())?;
            let status = stages::verification_status(&rows, strict, &mut warnings);
            Ok(Outcome { status, warnings, result: json!({ "network": network_summary(&net), "nodes": rows }) })
        }
        Command::Calibrate { input, prover, cal } => {
            let net = checked_network(inputs, &input.model, false)?;
            let certs = inputs.certificates(&input.cert, net.len())?;
            let calibrated = stages::calibrate_all(&net, &certs, &calibration_args(cal, prover))?;
            let rows = stages::verify(&net, &calibrated, &prover.args())?;
            let status = stages::verification_status(&rows, false, &mut warnings);
            Ok(Outcome {
                status,
                warnings,
                result: json!({ "network": network_summary(&net), "certificates": calibrated, "verification": rows }),
            })
        }
        Command::Augment { input, aug } => {
            let net = checked_network(inputs, &input.model, false)?;
            let certs = inputs.certificates(&input.cert, net.len())?;
            Ok(augment_outcome(&net, &certs, aug, warnings))
        }
        Command::Compose { input, weights } => {
            let doc: GainDoc = serde_json::from_value(inputs.document("gains", input)?).context("invalid composition input")?;
            let out = stages::compose(&doc, *weights, &mut warnings)?;
            let status = if out.composed.is_some() { Status::Ok } else { Status::Failed };
            Ok(Outcome { status, warnings, result: serde_json::to_value(out)? })
        }
        Command::Bound { input, mu, beta, eta, gamma, horizon, claim } => {
            let c = match input {
                Some(p) => composed_constants(&inputs.document("composition", p)?)?,
                None => match (mu, beta, eta, gamma) {
                    (Some(m), Some(b), Some(e), Some(g)) => (*m, *b, *e, *g),
                    (Some(m), Some(b), Some(e), None) if horizon.infinite => (*m, *b, *e, f64::NAN),
                    _ => bail!("give --input or all of --mu --beta --eta --gamma"),
                },
            };
            let h = (!horizon.infinite).then_some(horizon.horizon);
            let out = stages::bound(c, h, claim.claim.map(|p| (p, claim.claim_tol)), &mut warnings)?;
            Ok(Outcome { status: Status::Ok, warnings, result: serde_json::to_value(out)? })
        }
        Command::Simulate { input, sim, equivalence_seeds } => {
            let net = checked_network(inputs, &input.model, true)?;
            let certs = inputs.certificates(&input.cert, net.len())?;
            let cfg = sim.config(&net)?;
            let est = stages::simulate(&net, &certs, &cfg)?;
            sim.write_csv(&net, &certs, &cfg)?;
            let mut status = Status::Ok;
            let mut result = json!({ "network": network_summary(&net), "config": cfg, "estimate": est });
            if *equivalence_seeds > 0 {
                let ctrl = Controllers::from_bundles(&certs);
                let mut all = true;
                for seed in 0..*equivalence_seeds {
                    all &= equivalence_check(&net, &ctrl, &cfg, cfg.seed.wrapping_add(seed), None)?;
                }
                if !all {
                    warnings.push("original and augmented representations diverged".into());
                    status = Status::Failed;
                }
                result["equivalence"] = json!({ "seeds": equivalence_seeds, "identical": all });
            }
            Ok(Outcome { status, warnings, result })
        }
        Command::Pipeline { input, prover, cal, aug, weights, claim, sim, no_simulate } => {
            pipeline(inputs, input, prover, cal, aug, *weights, claim, sim, *no_simulate, strict)
        }
    }
}

fn composed_constants(v: &Value) -> Result<(f64, f64, f64, f64)> {
    let c = v
        .get("composed")
        .or_else(|| v.get("stages").and_then(|s| s.get("compose")).and_then(|c| c.get("composed")))
        .unwrap_or(v);
    let get = |k: &str| c.get(k).and_then(Value::as_f64).with_context(|| format!("composition input lacks `{k}`"));
    Ok((get("mu")?, get("beta")?, get("eta")?, get("gamma")?))
}

fn augment_outcome(net: &Network, certs: &[shs_safe_core::cbc::CertificateBundle], aug: &AugmentFlags, mut warnings: Vec<String>) -> Outcome {
    match stages::augment(net, certs, &augment_args(aug)) {
        Ok(rows) => {
            // identical notes from identical subsystems are reported once
            let mut seen = std::collections::HashSet::new();
            for r in &rows {
                for n in r.constants.notes.iter().filter(|n| seen.insert(n.as_str())) {
                    warnings.push(format!("{}: {n}", r.name));
                }
            }
            let gains = GainDoc { gains: rows.iter().map(|r| (&r.constants).into()).collect(), edges: net.edges.clone(), xi: None };
            Outcome {
                status: Status::Ok,
                warnings,
                result: json!({ "nodes": rows, "gains": gains.gains, "edges": gains.edges }),
            }
        }
        Err((i, e)) => {
            warnings.push(format!("{}: {e}", net.subsystems[i].label(i)));
            Outcome { status: Status::Failed, warnings, result: json!({ "failed_node": i, "error": e.to_string() }) }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn pipeline(
    inputs: &mut Inputs,
    input: &ModelInput,
    prover: &ProverFlags,
    cal: &CalibrationFlags,
    aug: &AugmentFlags,
    weights: Weights,
    claim: &ClaimFlags,
    sim: &SimFlags,
    no_simulate: bool,
    strict: bool,
) -> Result<Outcome> {
    let net = checked_network(inputs, &input.model, false)?;
    let printed = inputs.certificates(&input.cert, net.len())?;
    let sim_cfg = sim.config(&net)?;
    let mut warnings = Vec::new();
    let mut stages_out = serde_json::Map::new();
    let mut stage_status = serde_json::Map::new();
    let finish = |status: Status, warnings: Vec<String>, stages_out: serde_json::Map<String, Value>, stage_status: serde_json::Map<String, Value>, certs: Option<&[shs_safe_core::cbc::CertificateBundle]>| Outcome {
        status,
        warnings,
        result: json!({
            "network": network_summary(&net),
            "stage_status": stage_status,
            "stages": stages_out,
            "certificates": certs,
        }),
    };

    // certificates: printed constants under --strict-paper, calibrated otherwise
    let certs = if strict {
        printed
    } else {
        let c = stages::calibrate_all(&net, &printed, &calibration_args(cal, prover))?;
        stages_out.insert("calibrate".into(), json!({ "constants": c.iter().map(|b| b.constants).collect::<Vec<_>>() }));
        stage_status.insert("calibrate".into(), json!("ok"));
        c
    };
    let rows = stages::verify(&net, &certs, &prover.args())?;
    let status = stages::verification_status(&rows, strict, &mut warnings);
    stages_out.insert("verify".into(), json!({ "nodes": rows }));
    stage_status.insert("verify".into(), json!(status.name()));
    if status != Status::Ok {
        return Ok(finish(status, warnings, stages_out, stage_status, Some(&certs)));
    }

    let a = augment_outcome(&net, &certs, aug, Vec::new());
    warnings.extend(a.warnings);
    stage_status.insert("augment".into(), json!(a.status.name()));
    if a.status != Status::Ok {
        stages_out.insert("augment".into(), a.result);
        return Ok(finish(a.status, warnings, stages_out, stage_status, Some(&certs)));
    }
    let doc: GainDoc = serde_json::from_value(a.result.clone())?;
    stages_out.insert("augment".into(), a.result);

    let comp = stages::compose(&doc, weights, &mut warnings)?;
    let composed = comp.composed.clone();
    stage_status.insert("compose".into(), json!(if composed.is_some() { "ok" } else { "failed" }));
    stages_out.insert("compose".into(), serde_json::to_value(&comp)?);
    let Some(composed) = composed else {
        return Ok(finish(Status::Failed, warnings, stages_out, stage_status, Some(&certs)));
    };

    let b = stages::bound(
        (composed.mu, composed.beta, composed.eta, composed.gamma),
        Some(sim.horizon),
        claim.claim.map(|p| (p, claim.claim_tol)),
        &mut warnings,
    )?;
    let unsafe_bound = b.bound.unsafe_bound;
    stages_out.insert("bound".into(), serde_json::to_value(&b)?);
    stage_status.insert("bound".into(), json!("ok"));

    let open: Vec<String> = validate(&net).iter().map(|v| v.to_string()).collect();
    if !no_simulate && !open.is_empty() {
        warnings.push(format!("simulation skipped: {}", open.join("; ")));
        stage_status.insert("simulate".into(), json!("skipped"));
    } else if !no_simulate {
        let est = stages::simulate(&net, &certs, &sim_cfg)?;
        sim.write_csv(&net, &certs, &sim_cfg)?;
        let within = est.p_hat <= unsafe_bound;
        if !within {
            warnings.push(format!("empirical unsafe frequency {} exceeds the bound {unsafe_bound}", est.p_hat));
        }
        if est.escapes > 0 {
            warnings.push(format!("{} of {} trials left the state set and were excluded", est.escapes, est.trials));
        }
        stages_out.insert("simulate".into(), json!({ "config": sim_cfg, "estimate": est, "p_hat_within_bound": within }));
        stage_status.insert("simulate".into(), json!("ok"));
    }
    Ok(finish(Status::Ok, warnings, stages_out, stage_status, Some(&certs)))
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("SHS_SAFE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Verify { .. } => "verify",
        Command::Calibrate { .. } => "calibrate",
        Command::Augment { .. } => "augment",
        Command::Compose { .. } => "compose",
        Command::Bound { .. } => "bound",
        Command::Simulate { .. } => "simulate",
        Command::Pipeline { .. } => "pipeline",
    }
}

/// Runs one command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    let mut inputs = Inputs::default();
    let outcome = match pool.install(|| execute(&cli, &mut inputs)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            eprintln!("run `shs-safe {} --help` for usage", command_name(&cli.command));
            return 1;
        }
    };
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    let code = outcome.status.exit_code();
    let report = Report {
        tool: "shs-safe".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command_name(&cli.command).into(),
        timestamp: (!cli.no_timestamp).then(report::timestamp),
        inputs: inputs.digests,
        status: outcome.status.name().into(),
        exit_code: code,
        warnings: outcome.warnings,
        result: outcome.result,
    };
    if let Err(e) = report::write(&report, cli.out.as_ref()) {
        eprintln!("error: {e:#}");
        return 1;
    }
    code
}
