use std::path::Path;
use std::process::{Command, Output};

use ctxsd::cli::config::FORMAT_VERSION;
use ctxsd::cli::files::{read_counts, COUNT_COLUMNS, GRID_COLUMNS, POINT_COLUMNS};
use ctxsd::qubit::default_grid;
use ctxsd::sim::{run_experiment, NoiseConfig};

fn ctxsd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctxsd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> (serde_json::Value, Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (meta, body) = text.split_once('\n').unwrap();
    let meta: serde_json::Value = serde_json::from_str(meta.strip_prefix("# ").unwrap()).unwrap();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (meta, header, rows)
}

#[test]
fn grid_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ctxsd(&["grid"], dir.path()).status.success());
    let (meta, header, rows) = read_csv(&dir.path().join("grid.csv"));
    assert_eq!(meta["format_version"], FORMAT_VERSION);
    assert_eq!(meta["config"]["grid"], "default");
    assert_eq!(header, GRID_COLUMNS);
    assert_eq!(rows.len(), 136);
    let first: Vec<f64> = rows[0].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
}

#[test]
fn counts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctxsd(&["simulate", "--seed", "4"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("counts.csv");
    let (meta, header, rows) = read_csv(&path);
    assert_eq!(header, COUNT_COLUMNS);
    assert_eq!(rows.len(), 136 * 24);
    assert_eq!(meta["config"]["noise"]["seed"], 4);

    let (_, tables) = read_counts(&path).unwrap();
    let noise = NoiseConfig {
        seed: 4,
        ..NoiseConfig::default()
    };
    assert_eq!(tables, run_experiment(&default_grid(), &noise).unwrap());
}

#[test]
fn analysis_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"bootstrap": 20, "slices": [0.3]}"#).unwrap();
    let cfg = cfg.to_str().unwrap();
    let points = "1.0,0.3;1.2,0.3;0.3,0.3";
    assert!(ctxsd(&["simulate", "--config", cfg, "--points", points, "--seed", "2"], dir.path())
        .status
        .success());
    let out = ctxsd(&["analyze", "--config", cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let (meta, header, rows) = read_csv(&dir.path().join("points.csv"));
    assert_eq!(header, POINT_COLUMNS);
    assert_eq!(rows.len(), 3);
    // The noise model comes from the counts file, not from the analysis config.
    assert_eq!(meta["config"]["noise"]["seed"], 2);
    for row in &rows {
        assert!(row[13] == "VIOLATES" || row[13] == "NO_VIOLATION");
        for cell in &row[..13] {
            assert!(cell.parse::<f64>().unwrap().is_finite());
        }
    }

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["points"], 3);
    assert_eq!(summary["excluded_points"], serde_json::json!([[0.3, 0.3]]));
    assert!(summary["max_equivalence_residual"].as_f64().unwrap() < 1e-9);
    assert_eq!(summary["failed_points"], serde_json::json!([]));

    let (_, header, rows) = read_csv(&dir.path().join("heatmap_ds_theory.csv"));
    assert_eq!(header, ["theta", "alpha", "c", "eps", "ds"]);
    assert_eq!(rows.len(), 3);

    let (_, _, rows) = read_csv(&dir.path().join("slice_alpha_0.3.csv"));
    assert_eq!(rows.iter().filter(|r| r[0] == "exp").count(), 3);
    assert!(rows.iter().filter(|r| r[0] == "theory").count() > 50);
}

#[test]
fn sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"noise": {"shots": 0, "e_bright_given_dark": 0, "e_dark_given_bright": 0}, "bootstrap": 0}"#,
    )
    .unwrap();
    let out = ctxsd(&["sweep-depolarizing", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, _, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 11);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["monotone_nonincreasing"], true);
    let p = summary["p_star"].as_f64().unwrap();
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn bad_inputs_fail_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = ctxsd(&["grid", "--points", "0.1,0.2"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sin^2"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"bootstrp": 3}"#).unwrap();
    let out = ctxsd(&["grid", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bootstrp"));

    let out = ctxsd(&["analyze", "--counts", "missing.csv"], dir.path());
    assert!(!out.status.success());
    assert!(!dir.path().join("points.csv").exists());
    assert!(!dir.path().join("grid.csv").exists());
}

#[test]
fn incomplete_counts_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ctxsd(&["simulate", "--points", "1.0,0.3"], dir.path()).status.success());
    let path = dir.path().join("counts.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let truncated: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
    std::fs::write(&path, truncated.join("\n")).unwrap();
    let err = read_counts(&path).unwrap_err();
    assert!(format!("{err:#}").contains("missing cell"), "{err:#}");
}
