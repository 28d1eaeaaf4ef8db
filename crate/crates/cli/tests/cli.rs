use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phyloalive::parse_newick;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phyloalive"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn fixture(name: &str) -> String {
    let p: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/data")
        .join(name);
    p.to_str().unwrap().to_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(bin(d.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(bin(d.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_64() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(bin(d.path(), &["infer"]).status.code(), Some(64));
    assert_eq!(
        bin(
            d.path(),
            &["infer", "--model", "lgss", "--sampling", "delayed"]
        )
        .status
        .code(),
        Some(64)
    );
    assert_eq!(
        bin(d.path(), &["infer", "--model", "crbd"]).status.code(),
        Some(64)
    );
    let t = fixture("synthetic10.nwk");
    assert_eq!(
        bin(
            d.path(),
            &[
                "infer",
                "--model",
                "crbd",
                "--tree",
                &t,
                "--sampling",
                "fixed"
            ]
        )
        .status
        .code(),
        Some(64)
    );
    assert_eq!(
        bin(
            d.path(),
            &["simulate", "--lambda", "-1", "--mu", "0", "--age", "1"]
        )
        .status
        .code(),
        Some(64)
    );
    assert_eq!(
        bin(
            d.path(),
            &[
                "infer",
                "--model",
                "crbd",
                "--tree",
                &t,
                "--prior-lambda",
                "1"
            ]
        )
        .status
        .code(),
        Some(64)
    );
}

#[test]
fn simulate_without_events_gives_one_branch() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(
        d.path(),
        &["simulate", "--lambda", "0", "--mu", "0", "--age", "2"],
    );
    assert!(out.status.success());
    let t = parse_newick(&read(d.path(), "reconstructed.nwk")).unwrap();
    assert_eq!(t.len(), 2);
    assert_eq!(t.root_age(), 2.0);
}

#[test]
fn simulate_reconstruction_is_extant_only() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(
        d.path(),
        &[
            "simulate", "--lambda", "1", "--mu", "0.5", "--age", "5", "--seed", "4", "--leaves",
            "12",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let t = parse_newick(&read(d.path(), "reconstructed.nwk")).unwrap();
    assert!(t.leaves().all(|l| t.age(l) == 0.0));
    assert_eq!(t.stats().extant, 12);
    let complete = parse_newick(&read(d.path(), "complete.nwk")).unwrap();
    let (a, b) = (complete.prune().unwrap().stats(), t.stats());
    assert_eq!(
        (a.speciations, a.extant, a.branches),
        (b.speciations, b.extant, b.branches)
    );
    assert!((a.length - b.length).abs() < 1e-9);
}

#[test]
fn extinct_simulation_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(
        d.path(),
        &["simulate", "--lambda", "0", "--mu", "5", "--age", "10"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.path().join("reconstructed.nwk").exists());
}

#[test]
fn infer_writes_documented_schema() {
    let d = tempfile::tempdir().unwrap();
    let t = fixture("synthetic10.nwk");
    let out = bin(
        d.path(),
        &[
            "infer",
            "--model",
            "crbd",
            "--tree",
            &t,
            "--method",
            "bpf",
            "--sampling",
            "immediate",
            "-N",
            "32",
            "-M",
            "5",
            "--out-csv",
            "runs.csv",
            "--out-json",
            "s.json",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = read(d.path(), "runs.csv");
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run,method,sampling,N,logZ,propagations,degenerate,error"
    );
    assert_eq!(lines.count(), 5);
    let json: serde_json::Value = serde_json::from_str(&read(d.path(), "s.json")).unwrap();
    for key in [
        "M",
        "N",
        "ress",
        "car",
        "var_log_z",
        "rho",
        "degenerate_runs",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["M"], 5);
    assert!(json.get("oracle_log_z").is_none());
}

#[test]
fn kalman_check_reports_oracle() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(
        d.path(),
        &[
            "infer",
            "--model",
            "lgss",
            "--kalman-check",
            "-N",
            "64",
            "-M",
            "200",
            "--seed",
            "3",
        ],
    );
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["oracle_log_z"].as_f64().unwrap().is_finite());
    assert!(json["z_score"].as_f64().unwrap().abs() < 4.0);
    assert_eq!(json["rho"], 65.0 / 64.0);
}

#[test]
fn all_starved_runs_exit_nonzero() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(
        d.path(),
        &[
            "infer",
            "--model",
            "indicator",
            "--half-width",
            "0",
            "-N",
            "4",
            "-M",
            "3",
            "--starvation-cap",
            "100",
            "--out-csv",
            "r.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let csv = read(d.path(), "r.csv");
    assert!(csv.lines().skip(1).all(|l| l.contains("starved")));
}

#[test]
fn posterior_single_run_has_unit_weight() {
    let d = tempfile::tempdir().unwrap();
    let t = fixture("synthetic10.nwk");
    let out = bin(
        d.path(),
        &[
            "posterior",
            "--model",
            "crbd",
            "--tree",
            &t,
            "-N",
            "64",
            "-M",
            "1",
            "--out-csv",
            "m.csv",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = read(d.path(), "m.csv");
    let rows: Vec<&str> = m.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("1")));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("rate,mean,q025,q500,q975"));
}

#[test]
fn posterior_weights_sum_to_one() {
    let d = tempfile::tempdir().unwrap();
    let t = fixture("synthetic10.nwk");
    let out = bin(
        d.path(),
        &[
            "posterior",
            "--model",
            "crbd",
            "--tree",
            &t,
            "-N",
            "64",
            "-M",
            "30",
            "--out-csv",
            "m.csv",
        ],
    );
    assert!(out.status.success());
    let mut rdr = csv::Reader::from_path(d.path().join("m.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<String, f64>::new();
    for row in rdr.records() {
        let row = row.unwrap();
        *sums.entry(row[0].to_owned()).or_default() += row[2].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 2);
    assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-12));
}

#[test]
fn bisse_runs_with_states() {
    let d = tempfile::tempdir().unwrap();
    let t = fixture("synthetic10.nwk");
    let states: String = (1..=10).map(|i| format!("t{i},{}\n", i % 2)).collect();
    std::fs::write(d.path().join("s.csv"), format!("label,state\n{states}")).unwrap();
    let out = bin(
        d.path(),
        &[
            "infer",
            "--model",
            "bisse",
            "--tree",
            &t,
            "--states",
            "s.csv",
            "--sampling",
            "delayed",
            "-N",
            "64",
            "-M",
            "4",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["model"], "bisse");
}

#[test]
fn toycheck_indicator_zero_width_fails() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(
        d.path(),
        &[
            "toycheck",
            "--model",
            "indicator",
            "--half-width",
            "0",
            "-N",
            "4",
            "-M",
            "5",
            "--starvation-cap",
            "200",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("starv"));
}

#[test]
fn toycheck_lgss_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = bin(d.path(), &["toycheck", "--model", "lgss", "-M", "2000"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}
