use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_barrierflow"));
    cmd.env_remove("BARRIERFLOW_OUT");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

/// Parses a CSV artifact, checking the schema comment line.
fn read_csv(path: &Path, schema: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    assert_eq!(first, format!("# {schema} v1"));
    let mut reader = csv::Reader::from_reader(rest.as_bytes());
    let header = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn floats(row: &[String]) -> Vec<f64> {
    row.iter().map(|s| s.parse().unwrap()).collect()
}

fn out_arg(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn run_on_lin_simplex_reaches_the_minimizer() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "o");
    let res = run(&[
        "run",
        "--problem",
        "lin-simplex",
        "--scheme",
        "rhb",
        "--eta0",
        "0.05",
        "--iters",
        "500",
        "--seed",
        "1",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let dir = Path::new(&out);
    let summary = json(&dir.join("summary.json"));
    assert_eq!(summary["classification"], "boundary-stationary");
    assert_eq!(summary["config"]["eta0"], 0.05);

    let (header, rows) = read_csv(&dir.join("trace.csv"), "barrierflow-trace");
    assert_eq!(header, ["k", "x0", "x1", "f", "eta", "stable_res", "kkt_res", "gauge"]);
    let last = floats(rows.last().unwrap());
    assert!(last[1] > 1.0 - 1e-6);
    for row in &rows {
        let r = floats(row);
        assert!(r[7] > 0.0);
        assert!((r[1] + r[2] - 1.0).abs() < 1e-12);
    }

    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["problem"], "lin-simplex");
    assert_eq!(manifest["problem_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_problem_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "run",
        "--problem",
        "no-such-problem",
        "--out",
        &out_arg(tmp.path(), "o"),
    ]);
    assert_eq!(code(&res), 3);
    let err = stderr_json(&res);
    assert_eq!(err["error"]["kind"], "config");
    assert_eq!(err["error"]["exit_code"], 3);
}

#[test]
fn malformed_flags_exit_with_config_code() {
    for args in [
        vec!["run", "--bogus"],
        vec!["run", "--problem", "lin-simplex", "--eta0", "abc"],
        vec!["frobnicate"],
        vec!["run", "--problem", "lin-simplex", "--x0", "0.5,0.5,0"],
        vec!["run", "--problem", "lin-simplex", "--scheme", "newton"],
        vec!["run", "--problem", "lin-simplex", "--kernel", "ball"],
    ] {
        let res = run(&args);
        assert_eq!(code(&res), 3, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert_eq!(stderr_json(&res)["error"]["kind"], "config");
    }
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn escape_times_follow_the_logistic_formula() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "e");
    let res = run(&[
        "escape",
        "--problem",
        "lin-simplex",
        "--xbar",
        "0,1",
        "--eps",
        "0.5",
        "--deltas",
        "0.01,0.001",
        "--tmax",
        "12",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&Path::new(&out).join("exits.csv"), "barrierflow-exits");
    assert_eq!(
        header,
        [
            "delta",
            "start0",
            "start1",
            "t_exit",
            "reentries",
            "min_distance_after_exit"
        ]
    );
    let expected = [99f64.ln(), 999f64.ln()];
    assert_eq!(rows.len(), 2);
    for (row, want) in rows.iter().zip(expected) {
        let t: f64 = row[3].parse().unwrap();
        assert!((t - want).abs() < 0.01 * want, "{t} vs {want}");
        assert_eq!(row[4], "0");
    }
}

#[test]
fn escape_needs_a_spurious_reference_point() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "escape",
        "--problem",
        "lin-simplex",
        "--xbar",
        "1,0",
        "--eps",
        "0.5",
        "--deltas",
        "0.01",
        "--out",
        &out_arg(tmp.path(), "e"),
    ]);
    assert_eq!(code(&res), 2);
    assert_eq!(stderr_json(&res)["error"]["variant"], "NotSpurious");
    let missing = run(&["escape", "--problem", "lin-simplex", "--eps", "0.5", "--deltas", "0.01"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn diagnose_reports_the_spurious_vertex() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "d");
    let res = run(&["diagnose", "--problem", "lin-simplex", "--x", "0,1", "--out", &out]);
    assert_eq!(code(&res), 0);
    let report = json(&Path::new(&out).join("report.json"));
    assert_eq!(report["classification"], "spurious");
    assert_eq!(report["stable_residual"], 0.0);
    assert_eq!(report["s"][0], -1.0);
    assert_eq!(report["complementarity"]["status"], "strictly-violated");
    assert!(report["kkt"]["lambda"].is_array());

    let res = run(&["diagnose", "--problem", "lin-simplex", "--x", "1,0", "--out", &out]);
    assert_eq!(code(&res), 0);
    assert_eq!(
        json(&Path::new(&out).join("report.json"))["classification"],
        "boundary-stationary"
    );
}

#[test]
fn diagnose_with_perturbation_records_the_draw() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "d");
    let res = run(&[
        "diagnose",
        "--problem",
        "flat-simplex",
        "--x",
        "0.3,0.7",
        "--perturb",
        "0.01",
        "--seed",
        "4",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let report = json(&Path::new(&out).join("report.json"));
    let p = &report["perturbation"];
    assert_eq!(p["seed"], 4);
    assert!(p["v"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() <= 0.0));
    assert!(p["residual_system"]["norm"].as_f64().unwrap() > 0.0);
    assert_eq!(json(&Path::new(&out).join("manifest.json"))["seed"], 4);
}

#[test]
fn flow_writes_samples_and_neighborhood_events() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "f");
    let res = run(&[
        "flow",
        "--problem",
        "lin-simplex",
        "--x0",
        "0.01,0.99",
        "--h",
        "1e-3",
        "--tmax",
        "8",
        "--record-dt",
        "0.5",
        "--center",
        "0,1",
        "--radius",
        "0.5",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let (header, rows) = read_csv(&Path::new(&out).join("flow.csv"), "barrierflow-flow");
    assert_eq!(header, ["t", "x0", "x1", "f", "stable_res"]);
    let f: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    let summary = json(&Path::new(&out).join("summary.json"));
    let exit = summary["first_exit"].as_f64().unwrap();
    assert!((exit - 99f64.ln()).abs() < 0.05);
    assert_eq!(summary["reentries"], 0);

    let res = run(&["flow", "--problem", "lin-simplex", "--center", "0,1", "--out", &out]);
    assert_eq!(code(&res), 3);
}

#[test]
fn sweep_grid_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "s");
    for args in [
        vec!["sweep", "--problem", "lin-simplex", "--eta0", ""],
        vec!["sweep", "--problem", "lin-simplex", "--seeds", "3..3"],
        vec!["sweep", "--problem", "lin-simplex", "--eta0", "0.1,0.1"],
        vec!["sweep", "--problem", "lin-simplex", "--jobs", "0"],
    ] {
        let mut args = args.clone();
        args.extend(["--out", &out]);
        assert_eq!(code(&run(&args)), 3, "{args:?}");
    }
}

#[test]
fn sweep_writes_cells_and_index() {
    let tmp = tempfile::tempdir().unwrap();
    let out = out_arg(tmp.path(), "s");
    let res = run(&[
        "sweep",
        "--problem",
        "lin-simplex",
        "--eta0",
        "0.05,0.1",
        "--alpha",
        "0,0.75",
        "--seeds",
        "1..3",
        "--iters",
        "200",
        "--jobs",
        "3",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let dir = Path::new(&out);
    let (header, rows) = read_csv(&dir.join("index.csv"), "barrierflow-index");
    assert_eq!(
        header[..8],
        ["cell", "dir", "eta0", "alpha", "noise", "seed", "cell_seed", "status"]
    );
    assert_eq!(rows.len(), 8);
    let mut seeds: Vec<&String> = rows.iter().map(|r| &r[6]).collect();
    seeds.sort();
    seeds.dedup();
    assert_eq!(seeds.len(), 8);
    let mut hashes = Vec::new();
    for row in &rows {
        assert_eq!(row[7], "ok");
        let cell = dir.join(&row[1]);
        assert!(cell.join("trace.csv").exists());
        let manifest = json(&cell.join("manifest.json"));
        assert_eq!(manifest["seed"].as_u64().unwrap().to_string(), row[6]);
        hashes.push(manifest["config"].to_string());
    }
    hashes.sort();
    hashes.dedup();
    assert_eq!(hashes.len(), 8);
}

#[test]
fn runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let traces: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = out_arg(tmp.path(), name);
            let res = run(&[
                "run",
                "--problem",
                "lin-simplex",
                "--dim",
                "3",
                "--noise",
                "0.5",
                "--seed",
                "7",
                "--out",
                &out,
            ]);
            assert_eq!(code(&res), 0);
            std::fs::read(Path::new(&out).join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
    let other = out_arg(tmp.path(), "c");
    run(&[
        "run",
        "--problem",
        "lin-simplex",
        "--dim",
        "3",
        "--noise",
        "0.5",
        "--seed",
        "8",
        "--out",
        &other,
    ]);
    assert_ne!(std::fs::read(Path::new(&other).join("trace.csv")).unwrap(), traces[0]);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        r#"{ "problem": "lin-simplex", "dim": 3, "eta0": 0.2, "iters": 50, "seed": 3, "scheme": "mirror" }"#,
    )
    .unwrap();
    let out = out_arg(tmp.path(), "o");
    let res = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--iters",
        "20",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let cfg = &json(&Path::new(&out).join("summary.json"))["config"];
    assert_eq!(cfg["iters"], 20);
    assert_eq!(cfg["eta0"], 0.2);
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["scheme"], "mirror");
    assert_eq!(cfg["dim"], 3);

    std::fs::write(&config, r#"{ "problem": "lin-simplex", "unknown_key": 1 }"#).unwrap();
    assert_eq!(
        code(&run(&["run", "--config", config.to_str().unwrap(), "--out", &out])),
        3
    );
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let res = bin()
        .args(["diagnose", "--problem", "flat-simplex", "--x", "0.5,0.5"])
        .env("BARRIERFLOW_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&res), 0);
    let printed: Value = serde_json::from_slice(&res.stdout).unwrap();
    let dir = Path::new(printed["out"].as_str().unwrap());
    assert!(dir.starts_with(tmp.path()));
    assert_eq!(json(&dir.join("report.json"))["classification"], "interior-stationary");
}

#[test]
fn problem_files_are_hashed_and_solved() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("problem.json");
    std::fs::write(
        &file,
        r#"{ "name": "tilted", "objective": "linear:-1,0,0.5", "A": [[1, 1, 1]], "b": [1], "kernel": "entropy", "mfcq": true }"#,
    )
    .unwrap();
    let out = out_arg(tmp.path(), "o");
    let res = run(&[
        "run",
        "--problem-file",
        file.to_str().unwrap(),
        "--iters",
        "2000",
        "--out",
        &out,
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let summary = json(&Path::new(&out).join("summary.json"));
    assert_eq!(summary["classification"], "boundary-stationary");
    let first = json(&Path::new(&out).join("manifest.json"))["problem_hash"].clone();

    std::fs::write(
        &file,
        r#"{ "name": "tilted", "objective": "linear:-1,0,0.25", "A": [[1, 1, 1]], "b": [1], "kernel": "entropy", "mfcq": true }"#,
    )
    .unwrap();
    run(&[
        "run",
        "--problem-file",
        file.to_str().unwrap(),
        "--iters",
        "10",
        "--out",
        &out,
    ]);
    assert_ne!(json(&Path::new(&out).join("manifest.json"))["problem_hash"], first);

    std::fs::write(&file, r#"{ "name": "bad", "objective": "cubic:1,2" }"#).unwrap();
    assert_eq!(
        code(&run(&["run", "--problem-file", file.to_str().unwrap(), "--out", &out])),
        3
    );
}
