mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{ASYMMETRIC, SYMMETRIC};
use serde_json::Value;
use tempfile::TempDir;

fn loadbal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loadbal"))
        .args(args)
        .env_remove("LOADBAL_LOG")
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_asymmetric_writes_json_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let out = dir.path().join("report.json");
    let o = loadbal(&["solve", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout.contains("active_source") && stdout.contains("sink"),
        "{stdout}"
    );

    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!((report["lambda"].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert_eq!(report["nodes"][0]["role"], "active_source");
    assert_eq!(report["nodes"][1]["role"], "sink");
    assert!((report["mean_response_time"].as_f64().unwrap() - 0.357_692_307_692).abs() < 1e-9);
    assert!((report["flow"][0][1].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert!(report["kkt"]["conditions"].as_array().unwrap().len() >= 8);
    assert_eq!(report["converged"], true);
}

#[test]
fn solve_symmetric_is_all_neutral() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sym.json", SYMMETRIC);
    let out = dir.path().join("report.csv");
    let o = loadbal(&["solve", s(&cfg), "--format", "csv", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node_id,role,beta,phi,marginal_delay"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], "neutral");
        assert_eq!(cols[2], cols[3]);
    }
}

#[test]
fn unstable_network_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "bad.json", &ASYMMETRIC.replace("1.5", "8.5"));
    let o = loadbal(&["solve", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unstable network"), "{}", stderr(&o));
}

#[test]
fn schema_errors_name_the_path() {
    let dir = TempDir::new().unwrap();
    let bad = ASYMMETRIC.replace(
        "\"service_rate\": 4.0}\n  ]",
        "\"service_rate\": \"x\"}\n  ]",
    );
    let cfg = write(&dir, "bad.json", &bad);
    let o = loadbal(&["solve", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("nodes[1].service_rate"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn oracle_and_check() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let out = dir.path().join("oracle.json");
    let o = loadbal(&["oracle", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(r["comparison"]["objective_gap"].as_f64().unwrap() < 1e-5);
    assert_eq!(loadbal(&["check", s(&cfg)]).status.code(), Some(0));

    let sym = write(&dir, "sym.json", SYMMETRIC);
    let out = dir.path().join("sym.json.out");
    assert_eq!(
        loadbal(&["oracle", s(&sym), "--out", s(&out)])
            .status
            .code(),
        Some(0)
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["oracle"]["net_transfer"], serde_json::json!([0.0, 0.0]));
    assert_eq!(r["comparison"]["objective_gap"].as_f64().unwrap(), 0.0);
}

#[test]
fn oracle_rejects_six_nodes() {
    let dir = TempDir::new().unwrap();
    let nodes: Vec<String> = (0..6)
        .map(|i| format!(r#"{{"id": "n{i}", "arrival_rate": 0.1, "service_rate": 1.0}}"#))
        .collect();
    let doc = format!(
        r#"{{"nodes": [{}], "comm": {{"model": "constant", "params": {{"t": 0.1}}}}}}"#,
        nodes.join(",")
    );
    let cfg = write(&dir, "six.json", &doc);
    assert_eq!(loadbal(&["oracle", s(&cfg)]).status.code(), Some(2));
    assert_eq!(loadbal(&["check", s(&cfg)]).status.code(), Some(2));
    assert_eq!(loadbal(&["solve", s(&cfg)]).status.code(), Some(0));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = loadbal(&[
            "simulate",
            s(&cfg),
            "--policy",
            "static_optimal",
            "--seed",
            "42",
            "--jobs",
            "20000",
            "--out",
            s(out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with(
        "policy,seed,jobs,mean_response,ci_halfwidth,transfers\nstatic_optimal,42,20000,"
    ));
}

#[test]
fn simulate_parallel_matches_sequential() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let seq = dir.path().join("seq.csv");
    let par = dir.path().join("par.csv");
    let common = [
        "simulate",
        s(&cfg),
        "--policy",
        "sq",
        "--jobs",
        "5000",
        "--replications",
        "4",
    ];
    let o = loadbal(&[&common[..], &["--out", s(&seq)]].concat());
    assert_eq!(o.status.code(), Some(0));
    let o = loadbal(&[&common[..], &["--parallel", "3", "--out", s(&par)]].concat());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&seq).unwrap();
    assert_eq!(text, fs::read_to_string(&par).unwrap());
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn unknown_policy_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let o = loadbal(&["simulate", s(&cfg), "--policy", "random"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown policy"));
}

fn sweep_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| {
            let (head, roles) = l.split_at(l.find(",\"").or_else(|| l.rfind(',')).unwrap());
            let mut cols: Vec<String> = head.split(',').map(str::to_owned).collect();
            cols.push(roles.trim_start_matches(',').trim_matches('"').to_owned());
            cols
        })
        .collect()
}

#[test]
fn sweep_comm_delay() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let out = dir.path().join("sweep.csv");
    let o = loadbal(&[
        "sweep",
        s(&cfg),
        "--param",
        "comm.params.t",
        "--from",
        "0",
        "--to",
        "0.3",
        "--steps",
        "7",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("param_value,alpha,lambda,mean_response,roles\n"));
    let rows = sweep_rows(&csv);
    assert_eq!(rows.len(), 7);
    let lambdas: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(
        lambdas.windows(2).all(|w| w[1] <= w[0] + 1e-12),
        "{lambdas:?}"
    );
    assert_eq!(*lambdas.last().unwrap(), 0.0);
    assert_eq!(rows[0][4], "A,S");
    assert_eq!(rows[6][4], "N,N");
}

#[test]
fn sweep_marks_unstable_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let o = loadbal(&[
        "sweep",
        s(&cfg),
        "--param",
        "nodes[0].arrival_rate",
        "--from",
        "6",
        "--to",
        "9",
        "--steps",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows[0].ends_with("unstable"));
    assert!(
        rows[2].ends_with(",unstable") && rows[3].ends_with(",unstable"),
        "{csv}"
    );
}

#[test]
fn sweep_unknown_path_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "asym.json", ASYMMETRIC);
    let o = loadbal(&[
        "sweep",
        s(&cfg),
        "--param",
        "comm.params.q",
        "--from",
        "0",
        "--to",
        "1",
        "--steps",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn non_convergence_exits_3_with_best_iterate() {
    let dir = TempDir::new().unwrap();
    let doc = r#"{
      "nodes": [
        {"id": "a", "arrival_rate": 3.0, "service_rate": 4.0},
        {"id": "b", "arrival_rate": 0.0, "service_rate": 4.0}
      ],
      "comm": {"model": "mm1_channel", "params": {"t": 0.05, "capacity": 2.0}},
      "solver": {"max_outer": 1}
    }"#;
    let cfg = write(&dir, "slow.json", doc);
    let out = dir.path().join("best.json");
    let o = loadbal(&["solve", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert!(String::from_utf8_lossy(&o.stdout).contains("alpha"));
}

#[test]
fn help_exits_0() {
    assert_eq!(loadbal(&["--help"]).status.code(), Some(0));
    assert_eq!(loadbal(&[]).status.code(), Some(2));
}
