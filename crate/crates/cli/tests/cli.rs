use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const PUT: &[&str] = &[
    "--kind",
    "put",
    "--strike",
    "100",
    "--rate",
    "0.05",
    "--dividend",
    "0",
    "--sigma",
    "0.2",
    "--expiry",
    "1",
    "--spot",
    "100",
];

fn amerikan(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_amerikan"));
    cmd.args(args).env_remove("AMERIKAN_SEED");
    cmd
}

fn run(cmd: &[&str], flags: &[&str], extra: &[&str]) -> Output {
    let args: Vec<&str> = cmd.iter().chain(flags).chain(extra).copied().collect();
    amerikan(&args).output().expect("binary runs")
}

fn record(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "one record on stdout: {text}");
    serde_json::from_str(&text).unwrap()
}

fn price(v: &Value) -> f64 {
    v["price"].as_f64().unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn csv_rows(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

#[test]
fn semilinear_pde_matches_the_tree_record() {
    let tree = record(&run(&["price", "tree"], PUT, &["--steps", "20000"]));
    assert_eq!(tree["method"], "crr-richardson");
    assert!(tree["stderr"].is_null());
    let pde = record(&run(&["price", "pde"], PUT, &["--method", "semilinear"]));
    let rel = (price(&pde) - price(&tree)).abs() / price(&tree);
    assert!(rel < 1e-3, "pde {} tree {}", price(&pde), price(&tree));
    assert_eq!(pde["params"]["option"]["strike"], 100.0);
    assert!(pde["runtime_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn bsde_record_carries_a_standard_error() {
    let out = record(&run(
        &["price", "bsde"],
        PUT,
        &["--method", "driver", "--paths", "4000", "--steps", "10"],
    ));
    assert_eq!(out["method"], "bsde-driver");
    let se = out["stderr"].as_f64().unwrap();
    assert!(se > 0.0 && se < 0.5);
    assert!((price(&out) - 6.09).abs() < 0.5);
}

#[test]
fn usage_errors_exit_2() {
    let no_strike = [
        "--kind", "put", "--rate", "0.05", "--sigma", "0.2", "--expiry", "1", "--spot", "100",
    ];
    let out = run(&["price", "tree"], &no_strike, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--strike") && err.contains("Usage"), "{err}");

    assert_eq!(
        run(&["price", "pde"], PUT, &["--method", "psor"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["price", "tree"], PUT, &["--sigma", "-1"]).status.code(), Some(2));
    assert_eq!(run(&["price", "tree"], PUT, &["--bogus"]).status.code(), Some(2));
    assert_eq!(
        run(&["boundary"], PUT, &["--config", "/no/such/file.json"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn flags_override_the_config_file() {
    let cfg = repo_file("config/canonical_put.json");
    let cfg = cfg.to_str().unwrap();
    let base = record(&run(&["price", "pde"], &["--config", cfg], &["--grid", "200"]));
    assert_eq!(base["params"]["point"]["spot"], 100.0);
    let moved = record(&run(
        &["price", "pde"],
        &["--config", cfg],
        &["--grid", "200", "--spot", "90"],
    ));
    assert_eq!(moved["params"]["point"]["spot"], 90.0);
    assert!(price(&moved) > price(&base));
}

#[test]
fn call_without_dividends_has_no_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.csv");
    let out = run(
        &["boundary"],
        &[
            "--kind", "call", "--strike", "100", "--rate", "0.05", "--sigma", "0.2", "--expiry", "1", "--spot", "100",
        ],
        &["--grid", "200", "--out", path.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, "time,boundary_price,contact_nodes");
    assert_eq!(rows.len(), 201);
    for row in &rows {
        assert_eq!(row[1], "none");
        assert_eq!(row[2], "0");
    }
}

#[test]
fn put_boundary_rises_toward_expiry() {
    let out = run(&["boundary"], PUT, &["--grid", "400"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        reader.headers().unwrap(),
        vec!["time", "boundary_price", "contact_nodes"]
    );
    let mut prev = f64::NEG_INFINITY;
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let level: f64 = rec[1].parse().unwrap();
        assert!(level >= prev, "boundary fell to {level} after {prev}");
        assert!(level < 100.0);
        // 17 significant digits in scientific notation.
        let mantissa = rec[1].split('e').next().unwrap().replace('.', "");
        assert_eq!(mantissa.len(), 17);
        prev = level;
        rows += 1;
    }
    assert_eq!(rows, 401);
}

#[test]
fn surface_csv_follows_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let out = run(
        &["price", "pde"],
        PUT,
        &["--method", "obstacle", "--grid", "40", "--out", path.to_str().unwrap()],
    );
    record(&out);
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, "time,price,value,contact,measure_density");
    assert!(rows.iter().all(|r| r.len() == 5 && (r[3] == "true" || r[3] == "false")));
    assert!(rows.iter().any(|r| r[3] == "true"));
}

fn kprocess(flags: &[&str], dir: &Path, name: &str) -> (Value, PathBuf) {
    let path = dir.join(name);
    let out = run(
        &["kprocess"],
        flags,
        &[
            "--paths",
            "2000",
            "--steps",
            "20",
            "--grid",
            "200",
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (record(&out), path)
}

#[test]
fn kprocess_vanishes_without_interest() {
    let dir = tempfile::tempdir().unwrap();
    let flags = [
        "--kind", "put", "--strike", "100", "--rate", "0", "--sigma", "0.2", "--expiry", "1", "--spot", "100",
    ];
    let (summary, path) = kprocess(&flags, dir.path(), "k.csv");
    let (header, rows) = csv_rows(&path);
    assert_eq!(header, "path_id,time,x,y,k_dm,k_formula");
    assert_eq!(rows.len(), 2000 * 21);
    for row in &rows {
        assert!(row[4].parse::<f64>().unwrap().abs() < 1e-9, "{row:?}");
        assert_eq!(row[5].parse::<f64>().unwrap(), 0.0);
    }
    assert!(summary["discrepancy"]["mean_sup_gap"].as_f64().unwrap() < 1e-9);
}

#[test]
fn kprocess_is_reproducible_and_summarizes_its_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (a, pa) = kprocess(PUT, dir.path(), "a.csv");
    let (b, pb) = kprocess(PUT, dir.path(), "b.csv");
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    assert_eq!(a["discrepancy"], b["discrepancy"]);

    // Mean over paths of the sup gap, recomputed from the written columns.
    let (_, rows) = csv_rows(&pa);
    let mut sups = vec![0.0f64; 2000];
    for row in &rows {
        let id: usize = row[0].parse().unwrap();
        let gap = (row[4].parse::<f64>().unwrap() - row[5].parse::<f64>().unwrap()).abs();
        sups[id] = sups[id].max(gap);
    }
    let mean = sups.iter().sum::<f64>() / sups.len() as f64;
    let reported = a["discrepancy"]["mean_sup_gap"].as_f64().unwrap();
    assert!(reported > 0.0);
    assert!(
        (mean - reported).abs() <= 1e-12 * reported.max(1.0),
        "{mean} vs {reported}"
    );
}

#[test]
fn seed_variable_overrides_the_flag() {
    let flags: Vec<&str> = PUT
        .iter()
        .copied()
        .chain(["--method", "snell", "--paths", "2000", "--steps", "10"])
        .collect();
    let go = |seed: &str, env: Option<&str>| {
        let mut args = vec!["price", "bsde"];
        args.extend(&flags);
        args.extend(["--seed", seed]);
        let mut cmd = amerikan(&args);
        if let Some(v) = env {
            cmd.env("AMERIKAN_SEED", v);
        }
        price(&record(&cmd.output().unwrap()))
    };
    let one = go("1", None);
    let two = go("2", None);
    assert_ne!(one, two);
    assert_eq!(go("1", None), one);
    assert_eq!(go("1", Some("2")), two);
}

fn small_suite(tolerance_zero: bool) -> String {
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(repo_file("config/default_suite.json")).unwrap()).unwrap();
    let set = cfg["sets"][0].clone();
    cfg["sets"] = Value::Array(vec![set]);
    cfg["sets"][0]["points"] = serde_json::json!([{"spot": 100.0}]);
    cfg["sets"][0]["checks"] = serde_json::json!(["bsde_vs_pde"]);
    cfg["resolution"]["grid"] = 200.into();
    cfg["resolution"]["tree_steps"] = 2000.into();
    cfg["resolution"]["paths"] = 8192.into();
    cfg["resolution"]["steps"] = 10.into();
    if tolerance_zero {
        cfg["tolerances"]["bsde_vs_pde"] = 0.0.into();
    }
    cfg.to_string()
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };

    let bad = write("bad.json", "{\"seed\": 1, \"sets\": [");
    assert_eq!(
        amerikan(&["validate", "--config", bad.to_str().unwrap()])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
    let unknown = write(
        "unknown.json",
        &small_suite(false).replace("bsde_vs_pde\"]", "bsde_vs_nothing\"]"),
    );
    assert_eq!(
        amerikan(&["validate", "--config", unknown.to_str().unwrap()])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );

    let ok = write("ok.json", &small_suite(false));
    let prefix = dir.path().join("report");
    let out = amerikan(&[
        "validate",
        "--config",
        ok.to_str().unwrap(),
        "--out",
        prefix.to_str().unwrap(),
    ])
    .output()
    .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    let (header, rows) = csv_rows(&dir.path().join("report.csv"));
    assert_eq!(header, "check,parameter_set,measured,tolerance,pass");
    assert_eq!(
        rows,
        vec![vec![
            "bsde_vs_pde".to_string(),
            "canonical-put".into(),
            rows[0][2].clone(),
            "3.0000000000000000e0".into(),
            "true".into()
        ]]
    );
    assert!(dir.path().join("report.json").exists());

    let zero = write("zero.json", &small_suite(true));
    let out = amerikan(&["validate", "--config", zero.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL"));
}

#[test]
fn shipped_suite_passes() {
    let cfg = repo_file("config/default_suite.json");
    let out = amerikan(&["validate", "--config", cfg.to_str().unwrap(), "--format", "csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.ends_with(",true")), "{text}");
}
