use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use dose_dr_core::data::save_csv;
use dose_dr_core::estimator::{load_estimate_csv, Method};
use dose_dr_core::simulation::{dgp_sample, DgpVariant, ResultsTable};
use dose_dr_core::smoother::{local_linear_point, Kernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dose-dr"))
}

fn run(args: &[&str]) -> Output {
    bin().arg("-q").args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_sample(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let (data, _) = dgp_sample(n, DgpVariant::IndependentSurrogates, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
    let path = dir.join("data.csv");
    save_csv(&data, &path).unwrap();
    path
}

const ROLES: [&str; 8] = [
    "--treatment", "A", "--outcome", "Y", "--covariates", "V1,V2,V3,V4", "--surrogates", "S1,S2",
];

fn estimate_args<'a>(input: &'a str, out: &'a str, method: &'a str) -> Vec<&'a str> {
    let mut v = vec!["estimate", "--input", input];
    v.extend(ROLES);
    v.extend(["--method", method, "--out", out]);
    v
}

#[test]
fn dr_curve_has_25_rows_with_finite_se() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 2000, 1);
    let out = dir.path().join("curve.csv");
    let o = run(&estimate_args(input.to_str().unwrap(), out.to_str().unwrap(), "dr"));
    assert!(o.status.success(), "{}", stderr(&o));
    let curves = load_estimate_csv(&out).unwrap();
    assert_eq!(curves.len(), 1);
    let c = &curves[0];
    assert_eq!(c.method, Method::Dr);
    assert_eq!(c.grid.len(), 25);
    let se = c.se.as_ref().unwrap();
    assert!(se.iter().all(|s| s.is_finite() && *s > 0.0));
    assert!(c.bandwidth().unwrap() > 0.0);
    // the sidecar reproduces the run
    let cfg = dir.path().join("curve.csv.cfg");
    let again = dir.path().join("again.csv");
    let mut args = estimate_args(input.to_str().unwrap(), again.to_str().unwrap(), "dr");
    args.extend(["--config", cfg.to_str().unwrap()]);
    assert!(run(&args).status.success());
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn plugin_curve_has_empty_se() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 600, 2);
    let out = dir.path().join("curve.csv");
    let o = run(&estimate_args(input.to_str().unwrap(), out.to_str().unwrap(), "plugin"));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[2], "");
        assert_eq!(cells[5], "plugin");
    }
    let c = &load_estimate_csv(&out).unwrap()[0];
    assert!(c.se.is_none());
}

#[test]
fn missing_treatment_column_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 100, 3);
    let o = run(&[
        "estimate", "--input", input.to_str().unwrap(), "--treatment", "dose", "--outcome", "Y",
        "--covariates", "V1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("--treatment") && err.contains("dose"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 100, 4);
    let input = input.to_str().unwrap();
    let mut args = vec!["estimate", "--input", input];
    args.extend(ROLES);
    let mut bad_key = args.clone();
    bad_key.extend(["--set", "smoother.kernal=gaussian"]);
    let o = run(&bad_key);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("smoother.kernal"));
    assert_eq!(run(&["estimate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let mut bad_grid = args.clone();
    bad_grid.extend(["--grid", "2:0:5"]);
    assert_eq!(run(&bad_grid).status.code(), Some(2));
    let mut missing = vec!["estimate", "--input", "/nonexistent.csv"];
    missing.extend(ROLES);
    assert_eq!(run(&missing).status.code(), Some(2));
}

#[test]
fn grid_flag_sets_the_curve_points() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 900, 5);
    let out = dir.path().join("curve.csv");
    let mut args = estimate_args(input.to_str().unwrap(), out.to_str().unwrap(), "dr,plugin");
    args.extend(["--grid", "0:2:5"]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let curves = load_estimate_csv(&out).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[0].grid, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    assert_eq!(curves[1].method, Method::Plugin);
}

/// `(A, Z)` with a column to score directly.
fn write_scatter(dir: &Path, n: usize, seed: u64) -> (PathBuf, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    let mut z = Vec::new();
    let mut text = String::from("A,Y,V1,Z\n");
    for _ in 0..n {
        let a: f64 = rng.random_range(0.0..4.0);
        let v: f64 = rng.random_range(-1.0..1.0);
        let y = (2.0 * a).sin() + v;
        text.push_str(&format!("{a},{y},{v},{y}\n"));
        t.push(a);
        z.push(y);
    }
    let path = dir.join("scatter.csv");
    std::fs::write(&path, text).unwrap();
    (path, t, z)
}

fn brute_loocv(t: &[f64], y: &[f64], h: f64) -> Option<f64> {
    let mut acc = 0.0;
    for i in 0..t.len() {
        let (mut tt, mut yy) = (t.to_vec(), y.to_vec());
        tt.remove(i);
        yy.remove(i);
        let fit = local_linear_point(&tt, &yy, t[i], h, Kernel::Epanechnikov).ok()?;
        acc += (y[i] - fit.estimate()).powi(2);
    }
    Some(acc)
}

fn read_bandwidth_csv(path: &Path) -> Vec<(f64, Option<f64>, bool, bool)> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "h,loocv_score,feasible,chosen");
    lines
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (
                c[0].parse().unwrap(),
                (!c[1].is_empty()).then(|| c[1].parse().unwrap()),
                c[2].parse().unwrap(),
                c[3].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn bandwidth_scores_match_refit() {
    let dir = tempfile::tempdir().unwrap();
    let (input, t, z) = write_scatter(dir.path(), 120, 6);
    let out = dir.path().join("bw.csv");
    let o = run(&[
        "bandwidth", "--input", input.to_str().unwrap(), "--treatment", "A", "--outcome", "Y",
        "--covariates", "V1", "--values", "Z", "--grid-geom", "0.02:0.5:8", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_bandwidth_csv(&out);
    assert_eq!(rows.len(), 8);
    let mut best = (f64::NAN, f64::INFINITY);
    for (h, score, feasible, _) in &rows {
        match (score, brute_loocv(&t, &z, *h)) {
            (Some(s), Some(b)) => {
                assert!(*feasible);
                assert!((s - b).abs() <= 1e-8 * b, "h={h}: {s} vs {b}");
                if *s < best.1 {
                    best = (*h, *s);
                }
            }
            (None, _) => assert!(!feasible),
            (Some(s), None) => panic!("h={h}: shortcut {s} but refit degenerate"),
        }
    }
    let chosen: Vec<f64> = rows.iter().filter(|r| r.3).map(|r| r.0).collect();
    assert_eq!(chosen, vec![best.0]);
}

#[test]
fn bandwidth_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _, _) = write_scatter(dir.path(), 80, 7);
    let input = input.to_str().unwrap();
    let base = ["bandwidth", "--input", input, "--treatment", "A", "--outcome", "Y", "--covariates", "V1", "--values", "Z"];
    let out = dir.path().join("one.csv");
    let mut one = base.to_vec();
    one.extend(["--grid-list", "0.9", "--out", out.to_str().unwrap()]);
    assert!(run(&one).status.success());
    let rows = read_bandwidth_csv(&out);
    assert_eq!(rows.len(), 1);
    assert!(rows[0].3 && rows[0].0 == 0.9);

    let mut empty = base.to_vec();
    empty.extend(["--grid-geom", "0.1:1:0"]);
    assert_eq!(run(&empty).status.code(), Some(2));
    let mut empty_list = base.to_vec();
    empty_list.extend(["--grid-list", ""]);
    assert_eq!(run(&empty_list).status.code(), Some(2));

    let mut tiny = base.to_vec();
    tiny.extend(["--grid-list", "0.00001"]);
    assert_eq!(run(&tiny).status.code(), Some(3));
}

#[test]
fn bandwidth_on_pseudo_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_sample(dir.path(), 1500, 8);
    let out = dir.path().join("bw.csv");
    let mut args = vec!["bandwidth", "--input", input.to_str().unwrap()];
    args.extend(ROLES);
    args.extend(["--grid-geom", "0.05:1.0:20", "--out", out.to_str().unwrap()]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_bandwidth_csv(&out);
    assert_eq!(rows.len(), 20);
    assert_eq!(rows.iter().filter(|r| r.3).count(), 1);
}

fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn figure_two_spec_has_one_row_per_cell_and_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        "fig2.cfg",
        "# RMSE against alpha\nsimulation.n = 500,2000\nsimulation.alpha = 0.1:0.4:0.03\nsimulation.m = 100\nseed = 2024\n",
    );
    let out = dir.path().join("table.csv");
    let o = bin()
        .args(["simulate", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let progress = stderr(&o).lines().filter(|l| l.starts_with("# cell ")).count();
    assert_eq!(progress, 22);
    let table = ResultsTable::read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    for est in ["plugin", "dr"] {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.estimator == est).collect();
        assert_eq!(rows.len(), 22);
        assert!(rows.iter().all(|r| r.m == 100 && r.rmse.is_finite()));
    }
    assert!(table.rows.iter().any(|r| r.alpha == "0.13"));
}

#[test]
fn single_replication_is_quick_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "one.cfg", "simulation.m = 1\nsimulation.estimators = plugin,dr,oracle\n");
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    let started = Instant::now();
    let o = run(&["simulate", "--spec", spec.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(started.elapsed().as_secs_f64() < 10.0);
    assert!(run(&["simulate", "--spec", spec.to_str().unwrap(), "--out", out2.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(&out1).unwrap(), std::fs::read(&out2).unwrap());
    let table = ResultsTable::read_csv(std::fs::File::open(&out1).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 3);
}

#[test]
fn compare_writes_both_arms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mis.csv");
    let o = run(&[
        "compare", "--study", "misspecification", "--set", "simulation.n=300,600", "--set",
        "simulation.m=3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = ResultsTable::read_csv(std::fs::File::open(&out).unwrap()).unwrap();
    let names: Vec<&str> = table.rows.iter().map(|r| r.estimator.as_str()).collect();
    assert_eq!(names, ["plugin", "dr", "plugin", "dr", "plugin_misspecified", "dr_misspecified", "plugin_misspecified", "dr_misspecified"]);
    assert!(table.rows.iter().all(|r| r.alpha == "fit"));
    let cfg = std::fs::read_to_string(dir.path().join("mis.csv.cfg")).unwrap();
    assert!(cfg.contains("simulation.alpha = fit"));
}

#[test]
fn invalid_simulation_values_exit_2() {
    assert_eq!(run(&["simulate", "--set", "simulation.n=10"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--set", "simulation.alpha=-1"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--set", "estimator.ci_level=0.8"]).status.code(), Some(2));
    assert_eq!(run(&["compare", "--study", "nope"]).status.code(), Some(2));
}
