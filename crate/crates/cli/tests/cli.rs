use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn write_config(dir: &TempDir, body: &str) -> PathBuf {
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilevel-vi")).args(args).output().unwrap()
}

fn invoke(cmd: &str, config: &Path, out: &Path) -> Output {
    bin(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
}

/// Header plus rows of numbers (empty cells become NaN).
fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|c| match c {
                    "" => f64::NAN,
                    "true" => 1.0,
                    "false" => 0.0,
                    _ => c.parse().unwrap(),
                })
                .collect()
        })
        .collect();
    (header, rows)
}

fn meta(out: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(format!("{}.meta", out.display())).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn scalar_run_reaches_minimum() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = scalar_clamp\nK = 200\nT = 40\n");
    let out = dir.path().join("trace.csv");
    let o = invoke("run", &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, "k,f_value,hypergrad_norm_sq,dgap_final,inner_iters,oracle_err");
    let last = rows.last().unwrap();
    assert!(last[1].abs() < 1e-6, "final f = {}", last[1]);
    let m = meta(&out);
    let x = m["summary"]["x_final"][0].as_f64().unwrap();
    assert!((x - 0.25).abs() < 1e-3, "x = {x}");
    assert_eq!(m["config"]["instance"], "scalar_clamp");
    assert!(m["constants"]["beta"].as_f64().unwrap() > 0.0);
}

#[test]
fn zero_outer_iterations_write_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = affine_box\nK = 0\noracle_every = 1\n");
    let out = dir.path().join("trace.csv");
    assert_eq!(invoke("run", &cfg, &out).status.code(), Some(0));
    let (_, rows) = read_csv(&out);
    assert_eq!(rows.len(), 1);
    assert!(rows[0][5].is_finite(), "oracle error is recorded at k = 0");
}

#[test]
fn invalid_dgap_parameters_exit_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = scalar_clamp\na = 3\nb = 2\n");
    let out = dir.path().join("trace.csv");
    let o = invoke("run", &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("b > a > 0"));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_1() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o.csv");
    for body in ["instance = nope\n", "instance = scalar_clamp\nunknown = 1\n", "instance = scalar_clamp\nx0 = 0.1, 0.2\n"] {
        let cfg = write_config(&dir, body);
        assert_eq!(invoke("run", &cfg, &out).status.code(), Some(1), "{body}");
    }
    assert_eq!(bin(&["run", "--config", "/nonexistent.cfg", "--out", "x.csv"]).status.code(), Some(1));
    assert_eq!(bin(&["run"]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn scalar_verify_matches_exact_recursion() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = scalar_clamp\nx0 = 0.5\nT_range = 1..30\n");
    let out = dir.path().join("verify.csv");
    let o = invoke("verify", &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, "T,itd_fd_abs_err,itd_fd_rel_err,prop1_bound,lemma6_envelope_ok");
    assert_eq!(rows.len(), 30);
    for r in &rows {
        assert!((r[1] - 0.5f64.powi(r[0] as i32)).abs() <= 1e-9, "T = {}", r[0]);
        assert!(r[3] >= r[1], "bound below error at T = {}", r[0]);
        assert_eq!(r[4], 1.0);
    }
    let m = meta(&out);
    assert!((m["constants"]["q_hat"].as_f64().unwrap() - 0.5).abs() < 0.01);
    assert_eq!(m["status"]["prop1"], "satisfied");
}

#[test]
fn verify_bound_dominates_on_polyhedral() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = polyhedral\nT_range = 1..40\n");
    let out = dir.path().join("verify.csv");
    assert_eq!(invoke("verify", &cfg, &out).status.code(), Some(0));
    let (_, rows) = read_csv(&out);
    assert!(rows.iter().all(|r| r[3] >= r[1] || r[1] < 1e-8));
}

#[test]
fn sweep_over_t_lowers_the_floor() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "instance = nonconvex_outer\nK = 100\nsweep_axis = T\nsweep_values = 2, 5, 10, 20\n",
    );
    let out = dir.path().join("sweep.csv");
    let o = invoke("sweep", &cfg, &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(header, "axis_value,min_grad_norm_sq,scaled_product");
    let values: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(values, vec![2.0, 5.0, 10.0, 20.0]);
    for w in rows.windows(2) {
        assert!(w[1][1] <= w[0][1], "floor rose from T = {} to T = {}", w[0][0], w[1][0]);
    }
    for r in &rows {
        assert_eq!(r[2], 100.0 * r[1]);
    }
}

#[test]
fn empty_sweep_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = scalar_clamp\nsweep_axis = K\nsweep_values =\n");
    let out = dir.path().join("sweep.csv");
    assert_eq!(invoke("sweep", &cfg, &out).status.code(), Some(1));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "instance = affine_box\nK = 3\nseed = 1\n");
    let out = dir.path().join("trace.csv");
    let o = bin(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9", "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(meta(&out)["config"]["seed"], 9);
}

#[test]
fn list_instances_names_the_catalog() {
    let o = bin(&["list-instances"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    for name in bilevel_vi::problems::NAMES {
        assert!(text.contains(name), "{name} missing");
    }
}
