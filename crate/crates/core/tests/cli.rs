//! End-to-end runs of the `fleet-stability` binary.

use std::path::Path;
use std::process::{Command, Output};

use fleet_stability::graph::{GraphDocument, RoadGraph};

fn bin(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fleet-stability"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gridgen_sizes() {
    let dir = tempfile::tempdir().unwrap();
    for (k, nodes, edges) in [(2, 4, 8), (15, 225, 840)] {
        let out = bin(&["gridgen", &k.to_string(), "--out", "g.json"], dir.path());
        assert_eq!(out.status.code(), Some(0));
        let text = std::fs::read_to_string(dir.path().join("g.json")).unwrap();
        let doc = GraphDocument::from_json(&text).unwrap();
        assert_eq!((doc.nodes.len(), doc.edges.len()), (nodes, edges));
        let g = RoadGraph::from_document(&doc).unwrap();
        assert_eq!(g.edge_count(), edges);
    }
    assert_eq!(bin(&["gridgen", "1"], dir.path()).status.code(), Some(1));
}

#[test]
fn estimate_prints_expectations_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    bin(&["gridgen", "3", "--out", "g.json"], dir.path());
    std::fs::write(dir.path().join("t.csv"), "0,0,8\n0,1,8\n2,1,4\n3,0,2\n").unwrap();
    let out = bin(
        &[
            "estimate", "--trace", "t.csv", "--graph", "g.json", "--out", "m.json",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("E[eta]            1.0000"), "{text}");
    assert!(text.contains("E[d(rho,delta)]"));
    assert!(dir.path().join("m.json").exists());

    std::fs::write(dir.path().join("bad.csv"), "0,0,8\n1,0,42\n").unwrap();
    let out = bin(
        &["estimate", "--trace", "bad.csv", "--graph", "g.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

const REFERENCE: &str = r#"
[graph]
grid = 2
[demand]
uniform = true
[simulation]
delay = 15
[analysis]
f_max = 0.4
[analysis.inputs]
e_eta = 1.02
e_xi_rho = 17.47
e_vrand_rho = 17.62
e_rho_delta = 16.27
wd = 1.09
"#;

#[test]
fn analyze_reference_inputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.toml"), REFERENCE).unwrap();
    let out = bin(&["analyze", "a.toml", "--out", "res"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("res/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_coop"], 35);
    assert_eq!(report["n_robust"], 47);
    assert!(stdout(&out).contains("cooperative fleet"));

    let zero = REFERENCE.replace("delay = 15", "delay = 0");
    std::fs::write(dir.path().join("z.toml"), zero).unwrap();
    let out = bin(&["analyze", "z.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("undefined"));

    let none = REFERENCE.replace("f_max = 0.4", "f_max = 0.0");
    std::fs::write(dir.path().join("n.toml"), none).unwrap();
    bin(&["analyze", "n.toml", "--out", "n"], dir.path());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("n/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["n_robust"], report["n_coop"]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("u.toml"),
        format!("{REFERENCE}\n[bogus]\nx = 1\n"),
    )
    .unwrap();
    assert_eq!(
        bin(&["analyze", "u.toml"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(
        bin(&["simulate", "missing.toml"], dir.path()).status.code(),
        Some(1)
    );
}

#[test]
fn simulate_is_reproducible_and_classifies() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("s.toml"),
        r#"
[graph]
grid = 6
[demand]
uniform = true
eta = { 0 = 0.7, 1 = 0.3 }
[simulation]
fleet_size = "coop-bound"
horizon = 300
runs = 4
seed = 3
"#,
    )
    .unwrap();
    let first = bin(&["simulate", "s.toml", "--out", "o"], dir.path());
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(stdout(&first).contains("stable-like"));
    let series = std::fs::read(dir.path().join("o/series.csv")).unwrap();
    let summary = std::fs::read(dir.path().join("o/summary.json")).unwrap();
    bin(&["simulate", "s.toml", "--out", "o"], dir.path());
    assert_eq!(
        std::fs::read(dir.path().join("o/series.csv")).unwrap(),
        series
    );
    assert_eq!(
        std::fs::read(dir.path().join("o/summary.json")).unwrap(),
        summary
    );
    let lines = String::from_utf8(series).unwrap();
    assert_eq!(lines.lines().count(), 301);

    // flags override the config
    bin(
        &[
            "simulate",
            "s.toml",
            "--out",
            "p",
            "--horizon",
            "150",
            "--runs",
            "2",
            "--seed",
            "5",
        ],
        dir.path(),
    );
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("p/summary.json")).unwrap())
            .unwrap();
    assert_eq!(s["horizon"], 150);
    assert_eq!(s["runs"], 2);
    assert_eq!(s["config"]["simulation"]["seed"], 5);
}

#[test]
fn solve_cost_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.csv"),
        "# agents by requests\n4,1,3\n2,0,5\n3,2,2\n",
    )
    .unwrap();
    let out = bin(&["solve", "c.csv"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).ends_with("total,5\n"), "{}", stdout(&out));
    std::fs::write(dir.path().join("r.csv"), "1,2\n3\n").unwrap();
    let out = bin(&["solve", "r.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
