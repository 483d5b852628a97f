use serde_json::Value;
use std::path::{Path, PathBuf};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).display().to_string()
}

struct Run {
    code: i32,
    report: Value,
}

fn run(out: &Path, args: &[&str]) -> Run {
    let mut argv = vec!["shs-safe".to_string(), "--no-timestamp".into(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    let code = shs_safe::run(argv);
    let report = std::fs::read_to_string(out).ok().and_then(|s| serde_json::from_str(&s).ok()).unwrap_or(Value::Null);
    Run { code, report }
}

fn scratch() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    (dir, out)
}

fn verdicts(report: &Value) -> Vec<(String, String)> {
    report["result"]["nodes"][0]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["name"].as_str().unwrap().to_string(), c["verdict"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn calibrated_certificate_verifies() {
    let (dir, out) = scratch();
    let cal = run(&out, &["calibrate", "--model", &fixture("case1.json"), "--cert", &fixture("case1_cert.json")]);
    assert_eq!(cal.code, 0, "{}", cal.report);
    let cert = dir.path().join("calibrated.json");
    std::fs::rename(&out, &cert).unwrap();

    let r = run(&out, &["verify", "--model", &fixture("case1.json"), "--cert", cert.to_str().unwrap(), "--tol", "1e-6"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.report["status"], "ok");
    let v = verdicts(&r.report);
    assert!(v.len() >= 5 && v.iter().all(|(_, s)| s == "certified"), "{v:?}");
    for c in r.report["result"]["nodes"][0]["conditions"].as_array().unwrap() {
        assert!(c["margin"].as_f64().is_some());
    }
    let roles: Vec<&str> = r.report["inputs"].as_array().unwrap().iter().map(|d| d["role"].as_str().unwrap()).collect();
    assert_eq!(roles.len(), 2, "{roles:?}");
    assert!(r.report["inputs"][0]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn printed_certificate_is_falsified() {
    let (_dir, out) = scratch();
    let r = run(&out, &["verify", "--model", &fixture("case1.json"), "--cert", &fixture("case1_cert.json")]);
    assert_eq!(r.code, 2);
    assert_eq!(r.report["status"], "failed");
    let unsafe_level = &r.report["result"]["nodes"][0]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "unsafe_level")
        .unwrap()
        .clone();
    assert_eq!(unsafe_level["verdict"], "falsified");
    assert!(unsafe_level["witness"][0].as_f64().is_some());

    // the reproduction mode reports the same verdicts but only warns
    let strict = run(&out, &["--strict-paper", "verify", "--model", &fixture("case1.json"), "--cert", &fixture("case1_cert.json")]);
    assert_eq!(strict.code, 0);
    assert!(!strict.report["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn degree_cap_exhaustion_is_unknown() {
    let (_dir, out) = scratch();
    let r = run(&out, &["verify", "--model", &fixture("case3.json"), "--cert", &fixture("case3_cert.json")]);
    assert_eq!(r.code, 3, "{}", r.report["status"]);
    assert_eq!(r.report["status"], "unknown");
    assert!(verdicts(&r.report).contains(&("jump_decrease".into(), "unknown".into())));
}

#[test]
fn bound_reports_branch_and_flags_claims() {
    let (_dir, out) = scratch();
    let args = ["bound", "--mu", "0.13", "--beta", "4.4", "--eta", "0.0012", "--gamma", "0.994", "--horizon", "100"];
    let r = run(&out, &args);
    assert_eq!(r.code, 0);
    assert_eq!(r.report["result"]["bound"]["branch"], "eta_small");
    let p = r.report["result"]["bound"]["unsafe_bound"].as_f64().unwrap();
    assert!((p - 0.055_658_255_283_420_93).abs() < 1e-12);

    let claimed = run(&out, &[&args[..], &["--claim", "0.973"]].concat());
    assert_eq!(claimed.code, 0);
    assert_eq!(claimed.report["result"]["claim"]["matches"], false);
    assert_eq!(claimed.report["warnings"].as_array().unwrap().len(), 1);
}

#[test]
fn stages_chain_through_saved_reports() {
    let (dir, out) = scratch();
    let save = |name: &str| {
        let p = dir.path().join(name);
        std::fs::rename(&out, &p).unwrap();
        p.display().to_string()
    };
    let model = fixture("ring3_case1.json");
    assert_eq!(run(&out, &["calibrate", "--model", &model, "--cert", &fixture("case1_cert.json")]).code, 0);
    let certs = save("certs.json");
    assert_eq!(run(&out, &["augment", "--model", &model, "--cert", &certs]).code, 0);
    let gains = save("gains.json");
    let c = run(&out, &["compose", "--input", &gains]);
    assert_eq!(c.code, 0);
    let gamma = c.report["result"]["composed"]["gamma"].as_f64().unwrap();
    assert!(gamma > 0.0 && gamma < 1.0);
    let composed = save("composed.json");
    let b = run(&out, &["bound", "--input", &composed, "--horizon", "100"]);
    assert_eq!(b.code, 0);
    assert_eq!(b.report["result"]["bound"]["gamma"].as_f64().unwrap(), gamma);
}

#[test]
fn simulate_writes_csv_and_checks_equivalence() {
    let (dir, out) = scratch();
    let csv = dir.path().join("traj.csv");
    let r = run(
        &out,
        &[
            "simulate", "--model", &fixture("ring3_case1.json"), "--cert", &fixture("case1_cert.json"),
            "--trials", "50", "--horizon", "20", "--record", "2", "--csv", csv.to_str().unwrap(),
            "--equivalence-seeds", "3",
        ],
    );
    assert_eq!(r.code, 0, "{}", r.report);
    assert_eq!(r.report["result"]["estimate"]["trials"], 50);
    assert_eq!(r.report["result"]["equivalence"]["identical"], true);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("trial,k,node,x,theta\n"));
    // 2 trials × 21 states × 3 nodes
    assert_eq!(text.lines().count(), 1 + 2 * 21 * 3);
}

#[test]
fn input_errors_exit_one() {
    let (_dir, out) = scratch();
    assert_eq!(run(&out, &["verify", "--model", "/nonexistent.json", "--cert", &fixture("case1_cert.json")]).code, 1);
    assert_eq!(run(&out, &["verify", "--bogus-flag"]).code, 1);
    assert_eq!(run(&out, &["frobnicate"]).code, 1);
    assert_eq!(run(&out, &["bound", "--mu", "0.1"]).code, 1);
    // simulation needs a closed network
    assert_eq!(run(&out, &["simulate", "--model", &fixture("case1.json"), "--cert", &fixture("case1_cert.json")]).code, 1);
    assert_eq!(shs_safe::run(["shs-safe", "--help"]), 0);
}
