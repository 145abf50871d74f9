use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_escg");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn escg(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn escg")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Three-hour loop on a small benchmark design.
const SHORT: &str = r#"{
  "seed": 5,
  "drb": { "depths": [1, 32, 128], "circuits_per_depth": 2, "shots_per_circuit": 10, "two_qubit_fraction": 0.75 },
  "esc": {
    "n_samples": 12,
    "iterations": 2,
    "knobs": [
      { "name": "g1g2", "amplitude": 0.00525, "omega": 25.132741228718345, "phase": 0.0, "gain": 10000.0 },
      { "name": "psi1", "amplitude": 0.021, "omega": 12.566370614359172, "phase": 0.0, "gain": 7500.0 },
      { "name": "psi2", "amplitude": 0.021, "omega": 12.566370614359172, "phase": 1.5707963267948966, "gain": 10500.0 }
    ]
  },
  "loop": { "duration_hours": 3.0, "interval_minutes": 60.0 }
}"#;

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p.to_str().unwrap().to_string()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_writes_increasing_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let out = escg(&["simulate", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("suppression ratio"));
    assert!(stdout.contains("min/h"));

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("# escg "));
    assert!(trace.contains("seed=5 drift_seed="));
    let times: Vec<f64> = data_rows(&trace).iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(times.len(), 37);
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert!(!trace.contains('\r'));
    assert!(dir.path().join("esc_trace.csv").exists());
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let run = |sub: &str, seed: &str| {
        let out_dir = dir.path().join(sub);
        let out = escg(&["simulate", "--config", &cfg, "--out-dir", out_dir.to_str().unwrap(), "--seed", seed]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        std::fs::read(out_dir.join("trace.csv")).unwrap()
    };
    let a = run("a", "11");
    let b = run("b", "11");
    let c = run("c", "12");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn negative_interval_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SHORT.replace("\"interval_minutes\": 60.0", "\"interval_minutes\": -60.0"));
    let out = escg(&["simulate", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("loop.interval_minutes"), "{err}");
    assert!(err.contains("line 13"), "{err}");
    assert!(!dir.path().join("trace.csv").exists());
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", "{\n  \"seed\": 1,\n  \"drb\": [\n}");
    let out = escg(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));

    let unknown = write(dir.path(), "u.json", "{ \"sed\": 1 }");
    assert_eq!(escg(&["simulate", "--config", &unknown]).status.code(), Some(2));
    assert_eq!(escg(&["simulate", "--config", "/nonexistent/c.json"]).status.code(), Some(2));
    assert_eq!(escg(&["simulate"]).status.code(), Some(2));
}

#[test]
fn grid_single_cell_and_bad_space() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let space = write(
        dir.path(),
        "s.json",
        r#"{ "points": [ { "interval_minutes": 60.0, "circuits_per_depth": 2, "shots_per_circuit": 10, "iterations": 2, "n_samples": 12 } ] }"#,
    );
    let out = escg(&["grid", "--config", &cfg, "--space", &space, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let rows = data_rows(&grid);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].last().unwrap(), "ok");

    let bad = write(dir.path(), "bad.json", r#"{ "points": [ { "interval_minutes": "x" } ] }"#);
    assert_eq!(escg(&["grid", "--config", &cfg, "--space", &bad]).status.code(), Some(2));
    let empty = write(dir.path(), "empty.json", "{}");
    assert_eq!(escg(&["grid", "--config", &cfg, "--space", &empty]).status.code(), Some(2));
    let negative = write(
        dir.path(),
        "neg.json",
        r#"{ "points": [ { "interval_minutes": -1.0, "circuits_per_depth": 2, "shots_per_circuit": 10, "iterations": 2, "n_samples": 12 } ] }"#,
    );
    assert_eq!(escg(&["grid", "--config", &cfg, "--space", &negative]).status.code(), Some(2));
}

#[test]
fn grid_reference_sets_runtime_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SHORT);
    let space = configs().join("reference_sets.json");
    let out = escg(&[
        "grid",
        "--config",
        &cfg,
        "--space",
        space.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let grid = std::fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let runtimes: Vec<f64> = data_rows(&grid).iter().map(|r| r[5].parse().unwrap()).collect();
    assert_eq!(runtimes.len(), 3);
    assert!(runtimes[0] < runtimes[1] && runtimes[1] < runtimes[2], "{runtimes:?}");
}

#[test]
fn offset_demo_recovers_and_charges_experiment_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("offset_demo.json");
    let out = escg(&["offset-demo", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("one iteration charged 9.50 min"), "{stdout}");

    let csv = std::fs::read_to_string(dir.path().join("offset_demo.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 9);
    let last = rows.last().unwrap();
    let (r1, r2): (f64, f64) = (last[6].parse().unwrap(), last[7].parse().unwrap());
    assert!(r1.abs() < 0.02 && r2.abs() < 0.02, "{r1} {r2}");
    let reference = std::fs::read_to_string(dir.path().join("reference_drb.csv")).unwrap();
    assert_eq!(data_rows(&reference).len(), 9 * 8);
}

#[test]
fn offset_demo_zero_offsets_stays_near_nominal() {
    let dir = tempfile::tempdir().unwrap();
    let src = std::fs::read_to_string(configs().join("offset_demo.json"))
        .unwrap()
        .replace("\"initial_offsets\": { \"psi1\": 0.1, \"psi2\": -0.1 },", "");
    let cfg = write(dir.path(), "c.json", &src);
    let out = escg(&["offset-demo", "--config", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("offset_demo.csv")).unwrap();
    for row in data_rows(&csv) {
        let psi1: f64 = row[3].parse().unwrap();
        let psi2: f64 = row[4].parse().unwrap();
        assert!(psi1.abs() < 0.02 && psi2.abs() < 0.02, "{row:?}");
    }
}
