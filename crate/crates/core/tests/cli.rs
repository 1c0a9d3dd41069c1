use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfpca::cli::{EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};
use lfpca::data::{load_csv, uniform_grid, CurveDataset};
use nalgebra::DMatrix;
use serde_json::Value;
use tempfile::TempDir;

fn lfpca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfpca"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--scenario", "I", "--n", "40", "--p", "24", "--seed", "9", "--out", s(&out)];
    args.extend_from_slice(extra);
    let r = lfpca(&args);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

fn read_report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn csv_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn fit_writes_consistent_report_and_tables() {
    let tmp = TempDir::new().unwrap();
    let sim = simulate(tmp.path(), &[]);
    let out = tmp.path().join("fit");
    let r = lfpca(&["fit", "--input", s(&sim.join("curves.csv")), "--out", s(&out), "--seed", "4"]);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    let report = read_report(&out);

    let comps = report["components"].as_array().unwrap();
    assert!(!comps.is_empty());
    let sum: f64 = comps.iter().map(|c| c["fve"].as_f64().unwrap()).sum();
    assert!((sum - report["cumulative_fve"].as_f64().unwrap()).abs() <= 1e-10);
    assert!(report["max_cross_inner"].as_f64().unwrap() <= 1e-6);

    for f in report["files"].as_array().unwrap() {
        let path = out.join(f["path"].as_str().unwrap());
        assert_eq!(csv_rows(&path), f["rows"].as_u64().unwrap() as usize, "{}", path.display());
    }
    // ten rho1 candidates plus ten rho2 candidates per component
    assert_eq!(report["files"][1]["rows"].as_u64().unwrap() as usize, 10 + 10 * comps.len());
    assert_eq!(report["files"][0]["rows"].as_u64().unwrap(), 501);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let sim = simulate(tmp.path(), &[]);
    let first = snapshot(&sim);
    simulate(tmp.path(), &[]);
    assert_eq!(first, snapshot(&sim));

    let out = tmp.path().join("fit");
    let input = sim.join("curves.csv");
    let run = |workers: &str| {
        let r = lfpca(&["fit", "--input", s(&input), "--out", s(&out), "--rho2", "rfve:0.3", "--workers", workers]);
        assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
        snapshot(&out)
    };
    let a = run("1");
    let b = run("3");
    assert_eq!(a, b);
}

#[test]
fn comparison_table_has_method_by_component_rows() {
    let tmp = TempDir::new().unwrap();
    let args = ["--reps", "2", "--methods", "raw,lfpca"];
    let sim = simulate(tmp.path(), &args);
    let first = snapshot(&sim);
    assert_eq!(csv_rows(&sim.join("table.csv")), 6);
    assert_eq!(csv_rows(&sim.join("replicates.csv")), 4);
    simulate(tmp.path(), &args);
    assert_eq!(first, snapshot(&sim));
}

#[test]
fn noiseless_rank_one_recovers_generating_function() {
    let tmp = TempDir::new().unwrap();
    let p = 40;
    let grid = uniform_grid(0.0, 1.0, p);
    let f: Vec<f64> = grid.iter().map(|t| (std::f64::consts::PI * t).sin()).collect();
    let scores = [-2.0, -1.0, 0.5, 1.5, 3.0, -0.25, 0.75];
    let values = DMatrix::from_fn(scores.len(), p, |i, l| scores[i] * f[l]);
    let input = tmp.path().join("rank1.csv");
    CurveDataset::new(grid.clone(), values).unwrap().write_csv(&input).unwrap();
    let out = tmp.path().join("fit");
    let r = lfpca(&["fit", "--input", s(&input), "--out", s(&out), "--rho1", "0", "--rho2", "0", "--k", "1"]);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    let report = read_report(&out);
    let v: Vec<f64> = report["components"][0]["vector"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = v.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>() / norm;
    let err: f64 = v
        .iter()
        .zip(&f)
        .map(|(a, b)| (a - dot.signum() * b / norm).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(err < 1e-3, "err = {err}");
}

#[test]
fn reconstruction_with_full_basis_reproduces_curves() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    let r = lfpca(&["simulate", "--n", "30", "--p", "20", "--sigma", "0", "--seed", "2", "--out", s(&sim)]);
    assert_eq!(code(&r), EXIT_OK);
    let input = sim.join("curves.csv");
    let fit = tmp.path().join("fit");
    let r = lfpca(&[
        "fit", "--input", s(&input), "--out", s(&fit), "--rho1", "0", "--rho2", "0", "--k", "8", "--eps", "1e-12",
        "--max-iters", "200000",
    ]);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    let rec = tmp.path().join("rec");
    let r = lfpca(&["reconstruct", "--fit", s(&fit), "--input", s(&input), "--out", s(&rec)]);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    let y = load_csv(&input).unwrap();
    let x = load_csv(&rec.join("fitted.csv")).unwrap();
    let diff = (y.values() - x.values()).amax();
    assert!(diff < 1e-8, "max |X̂ − Y| = {diff}");
    assert_eq!(csv_rows(&rec.join("scores.csv")), 30);
    assert_eq!(csv_rows(&rec.join("mean.csv")), 20);

    // curves equal to the mean have zero scores and reconstruct to the mean
    let mean: Vec<f64> = read_report(&fit)["mean"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let flat = tmp.path().join("flat.csv");
    let values = DMatrix::from_fn(3, mean.len(), |_, l| mean[l]);
    CurveDataset::new(y.grid().to_vec(), values).unwrap().write_csv(&flat).unwrap();
    let rec2 = tmp.path().join("rec2");
    let r = lfpca(&["reconstruct", "--fit", s(&fit), "--input", s(&flat), "--out", s(&rec2)]);
    assert_eq!(code(&r), EXIT_OK);
    let x = load_csv(&rec2.join("fitted.csv")).unwrap();
    for i in 0..3 {
        for (l, m) in mean.iter().enumerate() {
            assert!((x.values()[(i, l)] - m).abs() < 1e-12);
        }
    }
}

#[test]
fn irregular_input_is_regridded() {
    let tmp = TempDir::new().unwrap();
    let sim = simulate(tmp.path(), &[]);
    let text = fs::read_to_string(sim.join("curves.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // knock out one observation so the input has a gap
    let mut cells: Vec<&str> = lines[3].split(',').collect();
    cells[5] = "";
    lines[3] = cells.join(",");
    let input = tmp.path().join("gappy.csv");
    fs::write(&input, lines.join("\n")).unwrap();
    let out = tmp.path().join("fit");
    let r = lfpca(&["fit", "--input", s(&input), "--out", s(&out), "--rho1", "0", "--rho2", "0", "--k", "2"]);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(read_report(&out)["data"]["regridded"], Value::Bool(true));
}

#[test]
fn config_file_values_yield_to_flags() {
    let tmp = TempDir::new().unwrap();
    let sim = simulate(tmp.path(), &[]);
    let out = tmp.path().join("fit");
    let cfg = tmp.path().join("cfg.json");
    let json = format!(
        r#"{{"input": "{}", "out": "{}", "rho1": 0, "rho2": "rfve:0.2", "k": 2, "seed": 7, "max-iters": 5000}}"#,
        s(&sim.join("curves.csv")),
        s(&out)
    );
    fs::write(&cfg, json).unwrap();
    let r = lfpca(&["fit", "--config", s(&cfg), "--k", "1"]);
    assert_eq!(code(&r), EXIT_OK, "{}", String::from_utf8_lossy(&r.stderr));
    let report = read_report(&out);
    assert_eq!(report["config"]["k"], "1");
    assert_eq!(report["config"]["rho2"], "rfve:0.2");
    assert_eq!(report["config"]["rho1"], "0");
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["config"]["max_iters"], 5000);
    assert_eq!(report["components"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes_follow_error_class() {
    let tmp = TempDir::new().unwrap();
    let sim = simulate(tmp.path(), &[]);
    let good = sim.join("curves.csv");
    let out = tmp.path().join("out");

    // input and parse failures
    let missing = tmp.path().join("missing.csv");
    assert_eq!(code(&lfpca(&["fit", "--input", s(&missing), "--out", s(&out)])), EXIT_INPUT);
    let corrupt = tmp.path().join("corrupt.csv");
    fs::write(&corrupt, "t,0,0.5,1\nc1,1.0,abc,2.0\nc2,0.5,0.1,0.2\n").unwrap();
    assert_eq!(code(&lfpca(&["fit", "--input", s(&corrupt), "--out", s(&out)])), EXIT_INPUT);
    let ragged = tmp.path().join("ragged.csv");
    fs::write(&ragged, "t,0,0.5,1\nc1,1.0,2.0\n").unwrap();
    assert_eq!(code(&lfpca(&["fit", "--input", s(&ragged), "--out", s(&out)])), EXIT_INPUT);

    // configuration failures
    for bad in [
        vec!["fit", "--input", s(&good), "--rho2", "rfve:1.5"],
        vec!["fit", "--input", s(&good), "--k", "fve:0"],
        vec!["fit", "--input", s(&good), "--rho1", "-1"],
        vec!["fit", "--input", s(&good), "--folds", "1"],
        vec!["fit", "--input", s(&good), "--eps", "0"],
        vec!["fit", "--out", s(&out)],
        vec!["fit", "--input", s(&good), "--bogus"],
        vec!["simulate", "--scenario", "III"],
        vec!["simulate", "--methods", "nonseq"],
        vec!["frobnicate"],
    ] {
        assert_eq!(code(&lfpca(&bad)), EXIT_CONFIG, "{bad:?}");
    }
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"input": "x.csv", "unknown_key": 1}"#).unwrap();
    assert_eq!(code(&lfpca(&["fit", "--config", s(&cfg)])), EXIT_CONFIG);
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(code(&lfpca(&["fit", "--config", s(&cfg)])), EXIT_CONFIG);

    // numerical failure: identical curves have no variance to explain
    let flat = tmp.path().join("flat.csv");
    fs::write(&flat, "t,0,0.25,0.5,0.75,1\na,1,2,3,2,1\nb,1,2,3,2,1\nc,1,2,3,2,1\n").unwrap();
    let diag_dir = tmp.path().join("flat_out");
    let r = lfpca(&["fit", "--input", s(&flat), "--out", s(&diag_dir), "--rho1", "0", "--rho2", "0"]);
    assert_eq!(code(&r), EXIT_NUMERICAL);
    let diag: Value = serde_json::from_str(&fs::read_to_string(diag_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["command"], "fit");

    // grid mismatch on reconstruction
    let fit = tmp.path().join("fit");
    let r = lfpca(&["fit", "--input", s(&good), "--out", s(&fit), "--rho1", "0", "--rho2", "0", "--k", "2"]);
    assert_eq!(code(&r), EXIT_OK);
    let other = tmp.path().join("other");
    let r = lfpca(&["simulate", "--n", "5", "--p", "30", "--out", s(&other)]);
    assert_eq!(code(&r), EXIT_OK);
    let r = lfpca(&["reconstruct", "--fit", s(&fit), "--input", s(&other.join("curves.csv")), "--out", s(&out)]);
    assert_eq!(code(&r), EXIT_INPUT);
    assert!(String::from_utf8_lossy(&r.stderr).contains("grid"));
}
