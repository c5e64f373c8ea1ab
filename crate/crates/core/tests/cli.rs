use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_protcomp"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mileage.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn compose_then_simulate_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "compose",
        fixture().to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "protected.json",
        "report.json",
        "manifests.json",
        "graph.dot",
        "problem.lp",
        "solution.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["cycles_broken"].as_array().unwrap().len(), 1);
    assert_eq!(report["proposed"], 12);
    assert!(report["selected"][0]["kind"].is_string());

    let o = run(&["simulate", out.join("protected.json").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("PASS"));
}

#[test]
fn tamper_prints_ids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run(&[
        "compose",
        fixture().to_str().unwrap(),
        "-o",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let protected = out.join("protected.json");
    // i0 is a global: nothing watches it
    let o = run(&["tamper", protected.to_str().unwrap(), "--inst", "0"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "[]");
    let o = run(&["tamper", protected.to_str().unwrap(), "--inst", "9"]);
    let ids: Vec<u32> = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(!ids.is_empty());
    let o = run(&["tamper", protected.to_str().unwrap(), "--inst", "4242"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR unknown_instruction:"));
}

#[test]
fn simulate_catches_a_patched_slot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(run(&[
        "compose",
        fixture().to_str().unwrap(),
        "-o",
        out.to_str().unwrap()
    ])
    .status
    .success());
    let path = out.join("protected.json");
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    // reverse the finalization order so some checker reads a stale slot
    let order = v["finalization_order"].as_array_mut().unwrap();
    order.reverse();
    std::fs::write(&path, v.to_string()).unwrap();
    let o = run(&["simulate", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).starts_with("FAIL"));
}

#[test]
fn gen_graph_export() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("p.json");
    let o = run(&[
        "gen",
        "--seed",
        "7",
        "--functions",
        "4",
        "--blocks",
        "2",
        "--det-ratio",
        "0.6",
        "-o",
        prog.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = dir.path().join("q.json");
    run(&[
        "gen",
        "--seed",
        "7",
        "--functions",
        "4",
        "--blocks",
        "2",
        "--det-ratio",
        "0.6",
        "-o",
        again.to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&prog).unwrap(),
        std::fs::read(&again).unwrap()
    );

    let dot = dir.path().join("g.dot");
    let summary = dir.path().join("s.json");
    let o = run(&[
        "graph",
        prog.to_str().unwrap(),
        "--dot",
        dot.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&dot)
        .unwrap()
        .starts_with("digraph defense {"));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(s["manifest_nodes"].as_u64().unwrap() > 0);

    let lp = dir.path().join("p.lp");
    let o = run(&[
        "export-lp",
        prog.to_str().unwrap(),
        "-o",
        lp.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&lp).unwrap();
    assert!(text.starts_with("Minimize") && text.ends_with("End\n"));
}

#[test]
fn compare_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("c.csv");
    let o = run(&[
        "compare",
        "--corpus-seed",
        "1",
        "--count",
        "4",
        "-o",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        let pct: f64 = r.split(',').nth(5).unwrap().parse().unwrap();
        assert!(pct >= 0.0);
    }
}

#[test]
fn error_lines_and_exit_codes() {
    let o = run(&["compose"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR usage:"));

    let o = run(&["simulate", "/definitely/not/here.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR io:"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"two_phase": false, "requirements": [{"metric": "explicit_instructions", "sense": ">=", "value": 100000}]}"#).unwrap();
    let o = run(&[
        "compose",
        fixture().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "-o",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR infeasible:"));
    assert_eq!(stderr(&o).lines().count(), 1);

    std::fs::write(&cfg, r#"{"bogus": 1}"#).unwrap();
    let o = run(&[
        "compose",
        fixture().to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("ERROR parse:"));
}
