use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use darboux_core::scenario::{exit_code, generate_case, run_scenario, CaseKind, RunOutputs};
use proptest::prelude::*;

fn darboux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darboux"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_trivial_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let csv = dir.path().join("r.csv");
    let out = darboux(&["run", s(&scenario("trivial_2d.json")), "--report", s(&report), "--csv", s(&csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("verdict: pass"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["verdict"], "pass");
    assert!(json["pullback"]["max"].as_f64().unwrap() <= 1e-12);
    let table = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 1 + 20);

    let text = darboux(&["render", s(&report)]);
    assert_eq!(text.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&text.stdout).lines().any(|l| l == "verdict: pass"));
    let csv_out = darboux(&["render", s(&report), "--format", "csv"]);
    assert!(String::from_utf8_lossy(&csv_out.stdout).starts_with("check,value,tolerance,status"));
}

#[test]
fn missing_levels_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("trivial_2d.json")).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["tower"].as_object_mut().unwrap().remove("levels");
    std::fs::write(&path, json.to_string()).unwrap();
    let out = darboux(&["run", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/tower/levels"), "{err}");
}

#[test]
fn generate_rejects_odd_dimension() {
    let out = darboux(&["generate", "trivial", "--dim", "3", "--depth", "1", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("even dimension"));
}

#[test]
fn generated_perturbation_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lp.json");
    let out = darboux(&["generate", "linear_perturbation", "--dim", "4", "--depth", "3", "--epsilon", "0.3", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    std::fs::write(&path, &out.stdout).unwrap();
    let run = darboux(&["run", s(&path)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));

    let neg = darboux(&["generate", "degenerate", "--epsilon", "-0.5"]);
    assert_eq!(neg.status.code(), Some(0));
}

#[test]
fn render_rejects_empty_and_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let out = darboux(&["render", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
    let out = darboux(&["render", s(&dir.path().join("nope.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("io error"));
}

#[test]
fn degenerate_render_flags_h1() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("d.json");
    let out = darboux(&["run", s(&scenario("degenerate_2d.json")), "--report", s(&report)]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&darboux(&["render", s(&report)]).stdout).to_string();
    assert!(text.contains("verdict: fail"));
    let h1 = text.lines().find(|l| l.starts_with("H1 min singular value")).unwrap();
    assert!(h1.contains("0.000e0") && h1.ends_with("FAIL"), "{h1}");
}

#[test]
fn identical_configs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let config = scenario("perturbed_2d_3level.json");
    for p in [&a, &b] {
        assert_eq!(darboux(&["run", s(&config), "--report", s(p)]).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exit_codes_follow_verdicts(
        kind in prop::sample::select(vec![CaseKind::Trivial, CaseKind::LinearPerturbation, CaseKind::Degenerate]),
        dim in prop::sample::select(vec![2usize, 4]),
        depth in 1usize..3,
        eps in -0.3f64..0.3,
        seed in 0u64..1000,
    ) {
        let mut config = generate_case(kind, dim, depth, Some(if kind == CaseKind::Degenerate { -1.0 } else { eps }), seed).unwrap();
        config.solver.step = 0.02;
        config.domain.samples = 4;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, config.to_json()).unwrap();
        let result = run_scenario(&path, &RunOutputs::default());
        let code = exit_code(&result);
        let report = result.unwrap().report;
        prop_assert_eq!(code, if report.passed() { 0 } else { 2 });
        let expected = if kind == CaseKind::Degenerate { 2 } else { 0 };
        prop_assert_eq!(code, expected, "{:?}", report.failures);
    }
}
