use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn examples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")
}

fn riskctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskctl"))
        .args(args)
        .output()
        .expect("spawn riskctl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

fn run_in(config: &str, out: &Path) -> Output {
    riskctl(&["run", config, "--out", out.to_str().unwrap()])
}

#[test]
fn every_example_validates() {
    for entry in fs::read_dir(examples()).unwrap() {
        let path = entry.unwrap().path();
        let out = riskctl(&["validate", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn unknown_key_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"model": {"kind": "atoms", "probs": [0.5, 0.5]}, "measure": {"kind": "entropic", "b": 1.0},
            "tasks": [{"kind": "evaluate", "payoff": {"kind": "values", "depth": 1, "values": [1.0, -1.0]}}],
            "colour": "blue"}"#,
    );
    assert_eq!(code(&riskctl(&["validate", &cfg])), 2);
    assert_eq!(code(&run_in(&cfg, dir.path())), 2);
}

#[test]
fn empty_task_list_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "empty.json",
        r#"{"model": {"kind": "atoms", "probs": [0.5, 0.5]}, "measure": {"kind": "entropic", "b": 1.0}, "tasks": []}"#,
    );
    assert_eq!(code(&riskctl(&["validate", &cfg])), 2);
}

#[test]
fn depth_beyond_model_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "deep.json",
        r#"{"model": {"kind": "lattice", "steps": 4, "horizon": 1.0}, "measure": {"kind": "entropic", "b": 1.0},
            "tasks": [{"kind": "evaluate", "payoff": {"kind": "abs_state", "depth": 9}}]}"#,
    );
    assert_eq!(code(&riskctl(&["validate", &cfg])), 2);
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&riskctl(&["run", missing.to_str().unwrap()])), 1);
}

#[test]
fn out_of_domain_evaluation_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "range.json",
        r#"{"model": {"kind": "atoms", "probs": [0.5, 0.5]},
            "measure": {"kind": "certainty_equivalent", "utility": {"kind": "q_exp", "q": 0.5}},
            "tasks": [{"kind": "evaluate", "payoff": {"kind": "values", "depth": 1, "values": [3.0, 4.0]}}]}"#,
    );
    assert_eq!(code(&riskctl(&["validate", &cfg])), 0);
    let out = run_in(&cfg, &dir.path().join("out"));
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failed_required_axiom_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let body = fs::read_to_string(examples().join("axioms_hq.json"))
        .unwrap()
        .replace(r#""required": ["cash_subadditive", "h_longevity"]"#, r#""required": ["cash_additive"]"#);
    let cfg = write_config(dir.path(), "hq.json", &body);
    let out_dir = dir.path().join("out");
    assert_eq!(code(&run_in(&cfg, &out_dir)), 4);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["failed_required"], serde_json::json!(["00_axioms:cash_additive"]));
    assert!(out_dir.join("00_axioms.csv").exists());
}

#[test]
fn hq_axiom_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("axioms_hq.json");
    assert_eq!(code(&run_in(cfg.to_str().unwrap(), dir.path())), 0);
    let mut reader = csv::Reader::from_path(dir.path().join("00_axioms.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let verdict = |axiom: &str| {
        rows.iter()
            .find(|r| &r[0] == axiom)
            .map(|r| r[2].to_owned())
            .unwrap_or_else(|| panic!("no row for {axiom}"))
    };
    assert_eq!(verdict("cash_additive"), "fail");
    assert_eq!(verdict("cash_subadditive"), "pass");
    assert_eq!(verdict("h_longevity"), "pass");
    assert_eq!(verdict("monotone"), "pass");
    assert_eq!(verdict("normalized"), "fail");
}

#[test]
fn entropic_evaluation_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("evaluate_entropic.json");
    assert_eq!(code(&run_in(cfg.to_str().unwrap(), dir.path())), 0);
    let text = fs::read_to_string(dir.path().join("entropic_two_atoms.csv")).unwrap();
    let value: f64 = text.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    let want = 1.0_f64.cosh().ln();
    assert!((value - want).abs() < 1e-8, "{value} vs {want}");
}

#[test]
fn seed_override_is_recorded_and_jobs_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = examples().join("axioms_hq.json");
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&riskctl(&["run", cfg, "--out", a.to_str().unwrap(), "--seed", "3"])), 0);
    assert_eq!(code(&riskctl(&["run", cfg, "--out", b.to_str().unwrap(), "--seed", "3", "--jobs", "1"])), 0);
    assert_eq!(fs::read(a.join("00_axioms.csv")).unwrap(), fs::read(b.join("00_axioms.csv")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 3);
}
