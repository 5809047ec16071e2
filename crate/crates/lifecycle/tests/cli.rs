use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn small() -> Value {
    json!({
        "market": {"r": 0.03, "alpha": 0.07, "beta": 0.2, "sigma": 0.1, "gamma": -0.1, "lambda": 1.0, "x0": 10.0},
        "mortality": {"mu": 0.01, "horizon": 10.0},
        "income": {"ell": 1.0},
        "preferences": {"rho": 0.02, "kappa": 0.05, "delta": 0.5},
        "pde": {"n_t": 40, "n_z": 21},
        "mc": {"steps": 100, "paths": 1000, "seed": 3},
        "put": {"exercise_stride": 5},
        "output": {"export_paths": 3}
    })
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lifecycle"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_the_constant_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let o = run(&["validate"], &cfg, &dir.path().join("out"));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok"));
}

#[test]
fn validate_rejects_a_jump_below_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["market"]["gamma"] = json!(-1.5);
    let cfg = write_config(dir.path(), &v);
    let o = run(&["validate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(
        text.contains("violations") && text.contains("gamma"),
        "{text}"
    );
}

#[test]
fn missing_table_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = small();
    v["market"]["alpha"] = json!({"kind": "table", "path": "nowhere.csv"});
    let cfg = write_config(dir.path(), &v);
    let o = run(&["validate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("market.alpha"), "{}", stderr(&o));
}

#[test]
fn tables_are_read_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("alpha.csv"),
        "t,z,value\n0,-1,0.06\n0,1,0.08\n10,-1,0.06\n10,1,0.08\n",
    )
    .unwrap();
    fs::write(dir.path().join("mu.csv"), "t,value\n0,0.01\n10,0.02\n").unwrap();
    let mut v = small();
    v["market"]["alpha"] = json!({"kind": "table", "path": "alpha.csv"});
    v["market"]["eta"] = json!({"kind": "ou", "speed": 0.5, "mean": 0.0});
    v["mortality"]["mu"] = json!({"kind": "table", "path": "mu.csv"});
    let cfg = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = run(&["solve"], &cfg, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    // the factor now matters: h varies across z at t = 0
    let grid = fs::read_to_string(out.join("dual_grid.csv")).unwrap();
    let h: Vec<f64> = grid
        .lines()
        .skip(1)
        .take(21)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(h.iter().any(|x| (x - h[0]).abs() > 1e-6));
}

#[test]
fn solve_is_factor_free_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("out");
    assert!(run(&["solve"], &cfg, &out).status.success());
    let first = fs::read(out.join("dual_grid.csv")).unwrap();
    let text = String::from_utf8_lossy(&first);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,z,h,psi_hat"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    for block in rows.chunks(21) {
        assert!(block.iter().all(|r| (r[2] - block[0][2]).abs() < 1e-12));
    }
    let meta: Value = serde_json::from_slice(&fs::read(out.join("solve.json")).unwrap()).unwrap();
    let ratio = meta["convergence"]["richardson_ratio"].as_f64().unwrap();
    assert!(ratio > 1.8, "{ratio}");

    assert!(run(&["solve"], &cfg, &out).status.success());
    assert_eq!(first, fs::read(out.join("dual_grid.csv")).unwrap());
}

#[test]
fn downstream_commands_need_solve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let o = run(&["simulate"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("run `lifecycle solve` first"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn obpi_needs_a_put_quote() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("out");
    assert!(run(&["solve"], &cfg, &out).status.success());
    let o = run(&["obpi"], &cfg, &out);
    assert!(
        stderr(&o).contains("run `lifecycle price-put` first"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn corrupted_grid_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("out");
    assert!(run(&["solve"], &cfg, &out).status.success());
    let path = out.join("dual_grid.csv");
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 2] = if bytes[n - 2] == b'1' { b'2' } else { b'1' };
    fs::write(&path, bytes).unwrap();
    let o = run(&["simulate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum mismatch"), "{}", stderr(&o));
}

#[test]
fn artifacts_from_another_config_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("out");
    assert!(run(&["solve"], &cfg, &out).status.success());
    let o = run(&["verify", "--seed", "99"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("produced from config"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn pipeline_writes_every_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small());
    let out = dir.path().join("out");
    for cmd in ["validate", "solve", "simulate", "price-put", "obpi"] {
        let o = run(&[cmd, "--threads", "2"], &cfg, &out);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let header = |f: &str| {
        fs::read_to_string(out.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(header("paths.csv"), "path_id,t,Z,S,Y*,X*,c*,p*,pi*");
    assert_eq!(
        header("restricted.csv"),
        "path_id,t,Y*,rho,put_value,X_hat,k_floor,c_hat,pi_hat,p_hat,violation_flag"
    );
    assert!(header("put_quote.csv").starts_with("rho,price,std_error"));
    assert!(header("put_boundary.csv").starts_with("t,bin"));
    // c* and p* columns agree exactly
    let paths = fs::read_to_string(out.join("paths.csv")).unwrap();
    for line in paths.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[6], cells[7]);
    }
    let manifest: Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_object().unwrap();
    assert_eq!(files.len(), 9);
    let hash = files["dual_grid.csv"]["config_hash"].as_str().unwrap();
    assert!(files.values().all(|e| e["config_hash"] == hash));
}
