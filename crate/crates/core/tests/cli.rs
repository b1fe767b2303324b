use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ridenet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ridenet")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const RAW_HEADER: &str = "medallion,pickup_datetime,trip_time_in_secs,passenger_count,pickup_longitude,pickup_latitude,dropoff_longitude,dropoff_latitude";

fn write_raw(path: &Path, rows: &[&str]) {
    let mut s = format!("{RAW_HEADER}\n");
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    fs::write(path, s).unwrap();
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().skip(1).count()
}

#[test]
fn ingest_valid_file_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    write_raw(
        &raw,
        &[
            "a,2013-01-01 10:00:00,600,1,-73.98,40.75,-73.97,40.76",
            "b,2013-01-01 10:05:00,300,2,-73.99,40.74,-73.98,40.75",
        ],
    );
    let out = dir.path().join("out");
    let o = ridenet(&["ingest", raw.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("rows_kept=2"));
    let store = fs::read_to_string(out.join("trips.csv")).unwrap();
    assert!(store.starts_with("# ridenet trip store v1\n"));
    assert_eq!(store.lines().count(), 4);
    assert!(out.join("cleaning_report.json").exists());
}

#[test]
fn ingest_missing_file_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = ridenet(&["ingest", missing.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));
}

#[test]
fn ingest_malformed_rows_are_counted_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    write_raw(
        &raw,
        &[
            "a,2013-01-01 10:00:00,600,1,-73.98,40.75,-73.97,40.76",
            "b,not a time,600,1,-73.98,40.75,-73.97,40.76",
            "c,2013-01-01 10:00:00,600,1,0,0,-73.97,40.76",
            "d,2013-01-01 10:00:00,600,1,-80.0,40.75,-73.97,40.76",
        ],
    );
    let out = dir.path().join("out");
    let o = ridenet(&["ingest", raw.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("cleaning_report.txt")).unwrap();
    assert_eq!(
        report,
        "rows_read=4\nrows_dropped_gps=1\nrows_dropped_bbox=1\nrows_dropped_schema=1\nrows_kept=1\n"
    );
}

#[test]
fn missing_column_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(&raw, "pickup_datetime,passenger_count\n2013-01-01 10:00:00,1\n").unwrap();
    let o = ridenet(&["ingest", raw.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "analysis_edge_m = 10.0\n");
    let o = ridenet(&["analyze", "--config", &cfg, "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(dir.path(), "no_such_key = 1\n");
    let o = ridenet(&["analyze", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "analysis_edge_m = 10.0\n[synth]\nn_days = 1\n");
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert!(ridenet(&["synth", "--config", &cfg, "--output-dir", out]).status.success());
    let o = ridenet(&["analyze", "--config", &cfg, "--analysis-edge", "1000", "--output-dir", out]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn synth_zero_rate_gives_empty_store_and_analyze_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nbase_rate = 0.0\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = ridenet(&["synth", "--config", &cfg, "--output-dir", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    // version line, then the header and no rows
    assert_eq!(data_rows(&out.join("trips.csv")), 1);

    let o = ridenet(&["analyze", "--config", &cfg, "--output-dir", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
    assert_eq!(data_rows(&out.join("features.csv")), 0);
    assert_eq!(data_rows(&out.join("utilization_d400_t30.csv")), 0);
}

#[test]
fn synth_month_spans_31_days_and_gives_744_feature_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nbase_rate = 0.05\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(ridenet(&["synth", "--config", &cfg, "--output-dir", out_s]).status.success());
    let store = fs::read_to_string(out.join("trips.csv")).unwrap();
    let starts: Vec<i64> = store
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    let first = *starts.iter().min().unwrap();
    let last = *starts.iter().max().unwrap();
    assert!(first >= 1_356_998_400 && last < 1_356_998_400 + 31 * 86_400);
    assert_eq!(first / 86_400, 1_356_998_400 / 86_400);
    assert_eq!(last / 86_400, 1_356_998_400 / 86_400 + 30);

    let o = ridenet(&["analyze", "--config", &cfg, "--output-dir", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("features.csv")), 744);
}

#[test]
fn five_minute_step_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "window_step_s = 300\n[synth]\nn_days = 2\nbase_rate = 0.05\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(ridenet(&["synth", "--config", &cfg, "--output-dir", out_s]).status.success());
    let o = ridenet(&["analyze", "--config", &cfg, "--output-dir", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("features.csv")), (2 * 86_400 - 3600) / 300 + 1);
}

#[test]
fn forecast_default_grid_and_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nn_days = 5\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(ridenet(&["synth", "--config", &cfg, "--output-dir", out_s]).status.success());
    let o = ridenet(&["forecast", "--config", &cfg, "--output-dir", out_s]);
    assert!(o.status.success(), "{}", stderr(&o));
    let models = fs::read_dir(out.join("models"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json"))
        .count();
    assert_eq!(models, 18);
    assert_eq!(data_rows(&out.join("grid_summary.csv")), 18);
    assert_eq!(fs::read_dir(out.join("sweeps")).unwrap().count(), 6);
    assert_eq!(data_rows(&out.join("sweeps/d400_t30.csv")), 13);

    let single = dir.path().join("single");
    let single_s = single.to_str().unwrap();
    let store = out.join("trips.csv");
    let o = ridenet(&[
        "forecast",
        "--config",
        &cfg,
        "--output-dir",
        single_s,
        "--trip-store",
        store.to_str().unwrap(),
        "--merge-edges",
        "800",
        "--delays",
        "300",
        "--horizons",
        "1",
        "--features",
        "n_edges,largest_eigenvalue",
        "--split-point",
        "2013-01-04 00:00:00",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&single.join("grid_summary.csv")), 1);
    assert!(single.join("models/d800_t300_h1.json").exists());
    assert!(single.join("validation.json").exists());
}

#[test]
fn forecast_on_empty_store_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nbase_rate = 0.0\n");
    let out = dir.path().to_str().unwrap();
    assert!(ridenet(&["synth", "--config", &cfg, "--output-dir", out]).status.success());
    assert_eq!(ridenet(&["forecast", "--config", &cfg, "--output-dir", out]).status.code(), Some(2));
}

#[test]
fn report_without_outputs_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ridenet(&["report", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn rerunning_analyze_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[synth]\nn_days = 2\n");
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(ridenet(&["synth", "--config", &cfg, "--output-dir", out_s]).status.success());
    assert!(ridenet(&["analyze", "--config", &cfg, "--output-dir", out_s]).status.success());
    let first = fs::read(out.join("aggregate.json")).unwrap();
    let features = fs::read(out.join("features.csv")).unwrap();
    assert!(ridenet(&["analyze", "--config", &cfg, "--output-dir", out_s, "--workers", "1"]).status.success());
    assert_eq!(fs::read(out.join("aggregate.json")).unwrap(), first);
    assert_eq!(fs::read(out.join("features.csv")).unwrap(), features);
}
