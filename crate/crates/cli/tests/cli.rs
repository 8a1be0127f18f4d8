use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn prodnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prodnet")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A one-firm economy whose first output is already out of range.
const EXPLODING: &str = r#"{
  "format_version": 1,
  "economy": {
    "technologies": [{"kind": "linear", "coeffs": [1e13]}],
    "demands": [{"intercept": 100.0, "slope": 1.0}],
    "max_periods": 50
  },
  "meta": {"label": "exploding"}
}"#;

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("broken.json"), "{ not json").unwrap();
    fs::write(d.join("exploding.json"), EXPLODING).unwrap();
    let table: &[(&[&str], i32)] = &[
        (&["scenarios"], 0),
        (&["--help"], 0),
        (&["run", "--scenario", "linear3", "--seed", "3", "--out", "o"], 0),
        (&["run", "--scenario", "no_such_scenario"], 1),
        (&["run", "--config", "missing.json"], 1),
        (&["run", "--config", "broken.json"], 1),
        (&["run", "--scenario", "linear3", "--config", "broken.json"], 1),
        (&["run", "--scenario", "linear3", "--periods", "0"], 1),
        (&["run", "--scenario", "linear3", "--bogus-flag"], 1),
        (&["frobnicate"], 1),
        (&["batch", "--scenario", "linear3", "--seeds", "2"], 1),
        (&["batch", "--scenario", "linear3"], 1),
        (&["batch", "--scenario", "linear3", "--seed-list", "4,4"], 1),
        (&["batch", "--scenario", "linear3", "--seeds", "2", "--seed", "1", "--parallel", "0"], 1),
        (&["shock", "--scenario", "five_baseline", "--event", "{\"period\": 5}"], 1),
        (&["shock", "--scenario", "five_baseline", "--event", "{\"period\":10,\"target\":9,\"kind\":\"shutdown\"}"], 1),
        (&["propagate", "--economy", "linear3", "--targets", "7"], 1),
        (&["analyze", "--in", "nowhere"], 1),
        (&["run", "--config", "exploding.json"], 2),
    ];
    for (args, code) in table {
        let o = prodnet(args, d);
        assert_eq!(o.status.code(), Some(*code), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn unknown_scenario_names_the_valid_set() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodnet(&["run", "--scenario", "linear4"], dir.path());
    let msg = stderr(&o);
    assert!(msg.contains("linear4") && msg.contains("linear3") && msg.contains("large100_hetero"), "{msg}");
}

#[test]
fn run_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodnet(&["run", "--scenario", "linear3", "--seed", "7", "--out", "d"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("d/linear3/7");
    for f in ["timeseries.csv", "flows.csv", "market.csv", "summary.json", "config.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let ts = fs::read_to_string(run.join("timeseries.csv")).unwrap();
    assert!(ts.starts_with("# format_version: 1\nperiod,firm,price,produced,residual_sold,market_sold,profit"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["format_version"], 1);
    assert_eq!(summary["seed"], 7);

    let o = prodnet(&["analyze", "--in", "d/linear3/7", "--ternary", "2", "--discrepancy"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run.join("ternary.csv").is_file() && run.join("discrepancy.csv").is_file());
}

#[test]
fn batch_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = prodnet(
        &["batch", "--scenario", "linear3", "--seeds", "6", "--seed", "11", "--parallel", "1", "--out", "a"],
        d,
    );
    assert!(a.status.success(), "{}", stderr(&a));
    let b = prodnet(
        &["batch", "--scenario", "linear3", "--seeds", "6", "--seed", "11", "--parallel", "4", "--out", "b"],
        d,
    );
    assert!(b.status.success(), "{}", stderr(&b));
    let read = |p: &str| fs::read(d.join(p).join("linear3/summary.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn shock_reports_changes() {
    let dir = tempfile::tempdir().unwrap();
    let event = r#"{"period": 400, "target": 3, "kind": "shutdown"}"#;
    let o =
        prodnet(&["shock", "--scenario", "five_baseline", "--event", event, "--seed", "2", "--out", "s"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s/five_baseline/2/shock.json")).unwrap()).unwrap();
    assert_eq!(v["shock_period"], 400);
    assert_eq!(v["after"]["alive"][3], false);
    assert!(v["profit_change"][3].is_null());
}

#[test]
fn propagate_writes_distance_buckets() {
    let dir = tempfile::tempdir().unwrap();
    let o = prodnet(
        &[
            "propagate",
            "--economy",
            "synthetic50",
            "--realizations",
            "1",
            "--targets",
            "0,3,31",
            "--shock-period",
            "400",
            "--after",
            "400",
            "--out",
            "p",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("p/synthetic50/propagation");
    let csv = fs::read_to_string(out.join("propagation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# format_version: 1"));
    assert_eq!(lines.next(), Some("family,direction,variable,distance,mean,mean_abs,se,n"));
    let mut rows = 0;
    for line in lines {
        let distance: u32 = line.split(',').nth(3).unwrap().parse().unwrap();
        assert!((1..=6).contains(&distance), "{line}");
        rows += 1;
    }
    assert!(rows > 0);
    assert!(out.join("diversity.csv").is_file());
}
