use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atlas::eval::rmse;

fn atlas(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atlas"))
        .current_dir(cwd)
        .args(args)
        .env_remove("ATLAS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = atlas(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const FAST: &[&str] = &["--set", "sarima_order=0,1,0,0,0,0,52", "--set", "sarima_order=1,0,0,0,0,0,52"];

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(FAST).copied().collect()
}

fn generated(root: &Path) {
    ok(root, &["generate", "--seed", "7", "--out", "d/"]);
}

/// Weeks of every row of a forecast CSV.
fn forecast_weeks(path: &Path) -> Vec<usize> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect()
}

#[test]
fn generate_fit_forecast_smoke() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    ok(dir.path(), &["fit", "--data", "d/", "--k", "16"]);
    let d = dir.path().join("d");
    ok(&d, &["forecast", "--horizon", "8"]);
    let weeks = forecast_weeks(&d.join("forecast.csv"));
    assert!(!weeks.is_empty());
    // 104 weeks with the default split (88, 96, 104).
    assert!(weeks.iter().all(|&w| (96..104).contains(&w)), "weeks outside the horizon");
}

#[test]
fn forecasts_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = format!("{name}/");
        ok(dir.path(), &["generate", "--seed", "3", "--out", &out]);
        ok(dir.path(), &with_fast(&["fit", "--data", &out, "--k", "6", "--lambda1", "0.5"]));
        ok(dir.path(), &with_fast(&["forecast", "--data", &out]));
    }
    let a = fs::read(dir.path().join("a/forecast.csv")).unwrap();
    let b = fs::read(dir.path().join("b/forecast.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn evaluate_prints_the_rmse_of_the_file() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    ok(dir.path(), &with_fast(&["fit", "--data", "d", "--k", "4"]));
    ok(dir.path(), &with_fast(&["forecast", "--data", "d"]));
    let path = dir.path().join("d/forecast.csv");
    let text = fs::read_to_string(&path).unwrap();
    let pairs: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[4].parse().unwrap(), f[3].parse().unwrap())
        })
        .collect();
    let stdout = ok(dir.path(), &["evaluate", "--forecasts", path.to_str().unwrap()]);
    assert!(stdout.contains(&format!("rmse={}\n", rmse(&pairs).unwrap())), "{stdout}");
    assert!(stdout.contains(&format!("cells={}\n", pairs.len())));
}

#[test]
fn help_exits_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [None, Some("generate"), Some("ingest"), Some("fit"), Some("forecast"), Some("evaluate"), Some("tune"), Some("compare")] {
        let args: Vec<&str> = sub.into_iter().chain(["--help"]).collect();
        let out = atlas(dir.path(), &args);
        assert_eq!(out.status.code(), Some(0), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
    }
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = atlas(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn user_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(atlas(dir.path(), &["fit", "--data", "missing"]).status.code(), Some(1));
    generated(dir.path());
    assert_eq!(atlas(dir.path(), &["fit", "--data", "d", "--set", "colour=red"]).status.code(), Some(1));
    assert_eq!(atlas(dir.path(), &["fit", "--data", "d", "--split", "5,4,3"]).status.code(), Some(1));
    assert_eq!(atlas(dir.path(), &["generate", "--out", "x", "--rho", "-0.9"]).status.code(), Some(1));
}

#[test]
fn numeric_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    fs::create_dir(&d).unwrap();
    let mut csv = String::from("store_id,product_id,week_t,y\n");
    for t in 0..30 {
        csv.push_str(&format!("s,p,{t},1e300\n"));
    }
    fs::write(d.join("tensor.csv"), csv).unwrap();
    fs::write(
        d.join("tensor.meta"),
        "format=atlas-tensor-v1\nn_stores=1\nn_products=1\nn_weeks=30\nn_cells=30\nweek_origin=0\n\
         standardize=none\nstandardize_mean=0\nstandardize_stddev=1\nstore=s\nproduct=p\n",
    )
    .unwrap();
    let out = atlas(dir.path(), &["fit", "--data", "d", "--k", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn ingest_rebuilds_the_generated_tensor() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    ok(
        dir.path(),
        &["ingest", "--input", "d/transactions.csv", "--out", "i", "--min-store", "1", "--min-product", "1"],
    );
    let a = fs::read(dir.path().join("d/tensor.csv")).unwrap();
    let b = fs::read(dir.path().join("i/tensor.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn renamed_columns_are_ingested() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("t.csv"),
        "shop,wk,syscode,gen,vendor,item,units,dollars\n1,1100,0,1,2,3,1,2.5\n1,1101,0,1,2,3,2,4.0\n",
    )
    .unwrap();
    let stdout = ok(
        dir.path(),
        &["ingest", "--input", "t.csv", "--out", "o", "--col-store", "shop", "--col-week", "wk", "--min-store", "1", "--min-product", "1"],
    );
    assert!(stdout.contains("into 2 cells"), "{stdout}");
}

#[test]
fn tune_writes_leaderboard_and_best_config() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let args = with_fast(&[
        "tune", "--data", "d", "--set", "tune_ranks=2,4", "--set", "tune_lambda1=0,1", "--set", "tune_lambda2=1",
        "--set", "tune_strategy=full",
    ]);
    ok(dir.path(), &args);
    let board = fs::read_to_string(dir.path().join("d/leaderboard.csv")).unwrap();
    assert_eq!(board.lines().count(), 5);
    let best = fs::read_to_string(dir.path().join("d/best.conf")).unwrap();
    assert!(best.contains("train_end=88"));
    ok(dir.path(), &["fit", "--data", "d", "--config", "d/best.conf"]);
}

#[test]
fn compare_writes_all_report_files() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let stdout = ok(
        dir.path(),
        &with_fast(&["compare", "--data", "d", "--k", "4", "--methods", "cpd_sarima,atlas_sarima,freeze_w", "--out", "r"]),
    );
    assert!(stdout.contains("freeze_w"));
    let csv = fs::read_to_string(dir.path().join("r/report.csv")).unwrap();
    assert!(csv.contains("cpd_sarima") && csv.contains("atlas_sarima"));
    assert!(dir.path().join("r/report.txt").is_file());
    assert!(dir.path().join("r/report.dat").is_file());
    let bad = atlas(dir.path(), &["compare", "--data", "d", "--methods", "vibes"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn context_features_round_trip_through_fit_and_forecast() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let tensor = fs::read_to_string(dir.path().join("d/tensor.csv")).unwrap();
    let mut features = String::from("store_id,product_id,week,price\n");
    for line in tensor.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let week: usize = f[2].parse().unwrap();
        features.push_str(&format!("{},{},{},{}\n", f[0], f[1], f[2], 1.0 + (week % 4) as f64));
    }
    fs::write(dir.path().join("x.csv"), features).unwrap();
    ok(dir.path(), &with_fast(&["fit", "--data", "d", "--k", "4", "--features", "x.csv"]));
    assert!(dir.path().join("d/context.csv").is_file());
    let missing = atlas(dir.path(), &with_fast(&["forecast", "--data", "d"]));
    assert_eq!(missing.status.code(), Some(1));
    ok(dir.path(), &with_fast(&["forecast", "--data", "d", "--features", "x.csv"]));
    assert!(!forecast_weeks(&dir.path().join("d/forecast.csv")).is_empty());
}
