use std::path::Path;
use std::process::{Command, Output};

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prosumer-exchange")).current_dir(dir).args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_then_run_central_writes_one_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli(dir.path(), &["generate", "--n", "3", "--t", "6", "--seed", "4", "--out", "s.json"]));
    ok(&cli(dir.path(), &["run-central", "--scenario", "s.json", "--out", "p.json", "--metrics", "m.csv"]));
    let text = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 5);
    assert_eq!(lines[1].split(',').count(), 5);
    ok(&cli(dir.path(), &["verify", "--scenario", "s.json", "--profile", "p.json"]));
}

#[test]
fn reruns_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli(dir.path(), &["generate", "--n", "2", "--t", "4", "--seed", "9", "--out", "s.json"]));
    ok(&cli(dir.path(), &["run-central", "--scenario", "s.json", "--metrics", "a.csv"]));
    ok(&cli(dir.path(), &["run-central", "--scenario", "s.json", "--metrics", "b.csv"]));
    ok(&cli(dir.path(), &["run-central", "--scenario", "s.json", "--metrics", "c.csv", "--mu", "0.2"]));
    let read = |f: &str| std::fs::read_to_string(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    // The equilibrium does not depend on the exchange prices.
    let row = |f: &str| -> Vec<f64> {
        read(f).lines().nth(1).unwrap().split(',').take(3).map(|v| v.parse().unwrap()).collect()
    };
    for (x, y) in row("a.csv").iter().zip(row("c.csv")) {
        assert!((x - y).abs() < 1e-5, "{x} vs {y}");
    }
}

#[test]
fn tampered_ledger_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli(dir.path(), &["generate", "--n", "2", "--t", "2", "--seed", "1", "--out", "s.json"]));
    let run = cli(
        dir.path(),
        &["run-dist", "--scenario", "s.json", "--epsilon", "1e-3", "--max-iters", "5", "--ledger", "l.jsonl", "--trace", "t.csv"],
    );
    assert!(run.status.code().is_some_and(|c| c <= 1));
    assert!(std::fs::read_to_string(dir.path().join("t.csv")).unwrap().starts_with("iteration,max_excess_demand"));
    ok(&cli(dir.path(), &["verify", "--scenario", "s.json", "--ledger", "l.jsonl"]));

    let path = dir.path().join("l.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let tampered = text.replacen("\\\"prosumer\\\":0", "\\\"prosumer\\\":1", 1);
    assert_ne!(tampered, text);
    std::fs::write(&path, tampered).unwrap();
    let out = cli(dir.path(), &["verify", "--scenario", "s.json", "--ledger", "l.jsonl"]);
    assert!(!out.status.success());
}

#[test]
fn compare_exchange_directions_on_a_scenario() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli(dir.path(), &["generate", "--n", "5", "--t", "6", "--seed", "2", "--out", "s.json"]));
    ok(&cli(dir.path(), &["compare-exchange", "--scenario", "s.json", "--out", "c.csv"]));
    let mut reader = csv::Reader::from_path(dir.path().join("c.csv")).unwrap();
    let row: Vec<f64> = reader.records().next().unwrap().unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect();
    let (peak_x, welfare_x, peak_n, welfare_n) = (row[0], row[1], row[3], row[4]);
    assert!(welfare_x >= welfare_n - 1e-6);
    assert!(peak_x <= peak_n + 1e-6);
}

#[test]
fn malformed_input_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli(dir.path(), &["generate", "--n", "2", "--t", "2", "--seed", "1", "--out", "s.json"]));
    let path = dir.path().join("s.json");
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    value["grid"]["gamma"] = serde_json::json!(["cheap", 0.1]);
    std::fs::write(&path, value.to_string()).unwrap();
    let out = cli(dir.path(), &["run-central", "--scenario", "s.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.gamma"));
}

#[test]
fn sweeps_write_fixed_headers() {
    let dir = tempfile::tempdir().unwrap();
    ok(&cli(dir.path(), &["efficiency-sweep", "--n-list", "1,2", "--seeds", "2", "--t", "2", "--out", "eta.csv"]));
    let eta = std::fs::read_to_string(dir.path().join("eta.csv")).unwrap();
    assert!(eta.starts_with("n,seed,renewable_scale,p_eq,p_star,eta\n"));
    assert_eq!(eta.lines().count(), 5);
    ok(&cli(dir.path(), &["gamma-sweep", "--n", "2", "--t", "2", "--gammas", "0.1:0.3:0.1", "--out", "g.csv"]));
    let gamma = std::fs::read_to_string(dir.path().join("g.csv")).unwrap();
    let first: Vec<&str> = gamma.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, ["0.1", "0.2", "0.3"]);
}
