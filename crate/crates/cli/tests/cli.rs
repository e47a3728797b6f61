use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn feeder(file: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/feeder30").join(file);
    p.canonicalize().unwrap().display().to_string()
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexneeds"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a config for the shipped feeder with the given extra sections.
fn feeder_config(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "[paths]\nnetwork = \"{}\"\nprofiles = \"{}\"\noutput = \"out\"\n{extra}",
        feeder("network.json"),
        feeder("profiles.csv")
    );
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

/// Two-node feeder with a small load that never congests.
fn quiet_config(dir: &Path, extra: &str) -> PathBuf {
    fs::write(
        dir.join("network.json"),
        r#"{"nodes":[{"id":0,"vmin":0.95,"vmax":1.05},{"id":1,"vmin":0.95,"vmax":1.05},{"id":2,"vmin":0.95,"vmax":1.05}],
            "branches":[{"from":0,"to":1,"r_ohm":0.01,"x_ohm":0.01,"smax_kva":200},{"from":1,"to":2,"r_ohm":0.01,"x_ohm":0.01,"smax_kva":200}],
            "loads":[{"node":1,"profile":"a"},{"node":2,"profile":"b"}],
            "slack":{"node":0,"v_pu":1.0}}"#,
    )
    .unwrap();
    let mut csv = String::from("a,b,pv\n");
    for t in 0..24 {
        csv.push_str(&format!("{},{},0\n", 1.0 + (t % 5) as f64, 2.0));
    }
    fs::write(dir.join("profiles.csv"), csv).unwrap();
    let p = dir.join("config.toml");
    fs::write(&p, format!("[paths]\nnetwork = \"network.json\"\nprofiles = \"profiles.csv\"\n{extra}")).unwrap();
    p
}

fn stage_dir(out: &Path, prefix: &str) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "expected one {prefix} stage in {out:?}");
    dirs.pop().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn single_scenario_cache_and_rerun() {
    let tmp = TempDir::new().unwrap();
    let cfg = feeder_config(tmp.path(), "[scenarios]\ncount = 1\n");
    let first = run(&cfg, &["gen-scenarios"]);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert!(stderr(&first).contains("computed"));
    let dir = stage_dir(&tmp.path().join("out"), "scenarios-");
    let node = fs::read_to_string(dir.join("node_2.csv")).unwrap();
    assert_eq!(node.lines().count(), 1);
    let modified = fs::metadata(dir.join("node_2.csv")).unwrap().modified().unwrap();
    let second = run(&cfg, &["gen-scenarios"]);
    assert_eq!(code(&second), 0);
    assert!(stderr(&second).contains("cache hit"));
    assert_eq!(fs::metadata(dir.join("node_2.csv")).unwrap().modified().unwrap(), modified);
}

#[test]
fn zero_forecast_error_reproduces_nominal_profiles() {
    let tmp = TempDir::new().unwrap();
    let cfg = quiet_config(tmp.path(), "[scenarios]\ncount = 3\nfe_load = 0.0\nfe_pv = 0.0\n");
    assert_eq!(code(&run(&cfg, &["gen-scenarios"])), 0);
    let dir = stage_dir(&tmp.path().join("out"), "scenarios-");
    let rows: Vec<Vec<f64>> = fs::read_to_string(dir.join("node_1.csv"))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let nominal: Vec<f64> = (0..24).map(|t| 1.0 + (t % 5) as f64).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| *r == nominal));
}

#[test]
fn zone_with_single_k_is_connected_and_stable() {
    let tmp = TempDir::new().unwrap();
    let cfg = feeder_config(tmp.path(), "[zoning]\nk_min = 2\nk_max = 2\n");
    let o = run(&cfg, &["zone"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = stage_dir(&tmp.path().join("out"), "zones-");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("partition.json")).unwrap()).unwrap();
    assert_eq!(doc["k"], 2);
    let first = fs::read(dir.join("partition.json")).unwrap();
    fs::remove_dir_all(&dir).unwrap();
    assert_eq!(code(&run(&cfg, &["zone"])), 0);
    assert_eq!(fs::read(dir.join("partition.json")).unwrap(), first);
    assert_eq!(fs::read_to_string(dir.join("silhouette.csv")).unwrap().lines().count(), 2);
}

#[test]
fn invalid_configs_exit_with_one_before_writing() {
    let tmp = TempDir::new().unwrap();
    let cfg = feeder_config(tmp.path(), "[scenarios]\ncount = 0\n");
    let o = run(&cfg, &["gen-scenarios"]);
    assert_eq!(code(&o), 1);
    assert!(!tmp.path().join("out").exists());

    let cfg = feeder_config(tmp.path(), "[study]\nalpha_p = [0.0, 0.7]\n");
    assert_eq!(code(&run(&cfg, &["study", "tighten"])), 1);

    let cfg = feeder_config(tmp.path(), "[zoning]\nk_min = 1\n");
    assert_eq!(code(&run(&cfg, &["zone"])), 1);

    let missing = tmp.path().join("missing.toml");
    fs::write(&missing, "[paths]\nnetwork = \"nowhere.json\"\nprofiles = \"nowhere.csv\"\n").unwrap();
    assert_eq!(code(&run(&missing, &["zone"])), 1);
    assert_eq!(code(&run(&tmp.path().join("absent.toml"), &["zone"])), 1);
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn quiet_feeder_needs_no_flexibility() {
    let tmp = TempDir::new().unwrap();
    let cfg = quiet_config(tmp.path(), "[scenarios]\ncount = 5\n");
    let o = run(&cfg, &["assess"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = stage_dir(&tmp.path().join("out"), "assess-");
    for (file, keys) in [("needs_nodal_power.csv", 2), ("needs_nodal_energy.csv", 1), ("needs_zonal_energy.csv", 1)] {
        for row in csv_rows(&dir.join(file)) {
            assert!(row.iter().skip(keys).all(|v| v.parse::<f64>().unwrap() == 0.0), "{file}: {row:?}");
        }
    }
}

fn power_needs(dir: &Path) -> Vec<(f64, f64)> {
    csv_rows(&dir.join("needs_nodal_power.csv"))
        .into_iter()
        .map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect()
}

#[test]
fn assess_resolves_congestion_and_shrinks_with_eps() {
    let tmp = TempDir::new().unwrap();
    let robust = feeder_config(tmp.path(), "[scenarios]\ncount = 20\n[study]\neps = 0.0\n");
    let o = run(&robust, &["assess"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir0 = stage_dir(&tmp.path().join("out"), "assess-");
    let needs0 = power_needs(&dir0);
    assert!(needs0.iter().any(|(up, down)| *up < 0.0 || *down > 0.0));
    let congestion = csv_rows(&dir0.join("congestion.csv"));
    assert!(congestion[0][4].parse::<f64>().unwrap() > 0.0, "baseline must be congested");
    assert_eq!(congestion[1][0], "0");
    assert_eq!(congestion[1][4].parse::<f64>().unwrap(), 0.0);

    let relaxed_dir = TempDir::new().unwrap();
    let relaxed = feeder_config(relaxed_dir.path(), "[scenarios]\ncount = 20\n[study]\neps = 0.05\n");
    assert_eq!(code(&run(&relaxed, &["assess"])), 0);
    let needs5 = power_needs(&stage_dir(&relaxed_dir.path().join("out"), "assess-"));
    for ((u0, d0), (u5, d5)) in needs0.iter().zip(&needs5) {
        assert!(u5.abs() <= u0.abs() && d5.abs() <= d0.abs());
    }
}

#[test]
fn cc_study_at_zero_has_no_congestion() {
    let tmp = TempDir::new().unwrap();
    let cfg = feeder_config(tmp.path(), "[study]\neps_list = [0.0]\ncc_scenarios = 10\n");
    let o = run(&cfg, &["study", "cc"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&stage_dir(&tmp.path().join("out"), "study-cc-").join("cc_sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "none");
    assert_eq!(rows[1][0], "0");
    assert!(rows[1][1..6].iter().all(|v| v.parse::<f64>().unwrap() == 0.0), "{:?}", rows[1]);
}

#[test]
fn tightening_origin_costs_nothing() {
    let tmp = TempDir::new().unwrap();
    let cfg = feeder_config(tmp.path(), "[study]\nalpha_p = [0.0]\nalpha_e = [0.0]\ntightening_scenarios = 4\n");
    let o = run(&cfg, &["study", "tighten"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = stage_dir(&tmp.path().join("out"), "study-tighten-");
    let rows = csv_rows(&dir.join("tightening_objective.csv"));
    assert_eq!(rows, vec![vec!["0".to_string(), "0".to_string()]]);
    assert_eq!(csv_rows(&dir.join("tightening_feasibility.csv")), vec![vec!["0".to_string(), "100".to_string()]]);
}

const SMALL: &str = "[scenarios]\ncount = 12\n[study]\neps_list = [0.0, 0.1, 0.2]\ncc_scenarios = 12\ntightening_scenarios = 3\nalpha_p = [0.0, 0.3]\nalpha_e = [0.0, 0.4]\n[run]\nthreads = 1\n";

#[test]
fn report_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ca, cb) = (feeder_config(a.path(), SMALL), feeder_config(b.path(), SMALL));
    let oa = run(&ca, &["report"]);
    assert_eq!(code(&oa), 0, "{}", stderr(&oa));
    assert_eq!(code(&run(&cb, &["report"])), 0);
    let ra = a.path().join("out/report");
    let mut names: Vec<String> = fs::read_dir(&ra).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    for expected in ["cc_sweep.csv", "pareto.csv", "silhouette.csv", "summary.md", "tightening_objective.csv", "variance.csv"] {
        assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
    }
    for n in &names {
        assert_eq!(fs::read(ra.join(n)).unwrap(), fs::read(b.path().join("out/report").join(n)).unwrap(), "{n} differs");
    }
    let again = run(&ca, &["report"]);
    assert_eq!(code(&again), 0);
}
