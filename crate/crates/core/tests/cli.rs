use std::path::Path;
use std::process::{Command, Output};

fn geoassess(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoassess"))
        .args(args)
        .current_dir(dir)
        .env_remove("GEOASSESS_THREADS")
        .output()
        .unwrap()
}

fn simulate(dir: &Path, n: &str, seed: &str, out: &str) {
    let o = geoassess(&["simulate", "--n", n, "--nu", "0.5", "--eff-range", "0.2", "--seed", seed, "--out", out], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_csv_and_reports_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = geoassess(&["simulate", "--n", "144", "--nu", "0.5", "--eff-range", "0.2", "--seed", "7", "--out", "d.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("seed = 7") && err.contains("resolved configuration"), "{err}");
    let text = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,z");
    assert_eq!(lines.len(), 145);
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "64", "3", "a.csv");
    simulate(dir.path(), "64", "3", "b.csv");
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    let assess = ["assess", "--data", "a.csv", "--true", "sigma2=1,eff_range=0.2,nu=0.5", "--approx", "sigma2=1.1,alpha=0.07,nu=0.5"];
    assert_eq!(geoassess(&assess, dir.path()).stdout, geoassess(&assess, dir.path()).stdout);
    let exp = ["experiment", "--scenario", "misspecification", "--n", "36", "--replicates", "2", "--no-timing"];
    assert_eq!(geoassess(&exp, dir.path()).stdout, geoassess(&exp, dir.path()).stdout);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "144", "5", "d.csv");
    let run = |t: &str| {
        let o = geoassess(&["--threads", t, "fit", "--method", "tlr", "--nb", "36", "--tlr-acc", "1e-9", "--opt-tol", "1e-4", "d.csv"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        v["result"]["theta_hat"].clone()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn assess_reports_nonnegative_mloe() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "144", "7", "d.csv");
    let o = geoassess(
        &[
            "assess", "--data", "d.csv", "--true", "sigma2=1,alpha=0.06676164013906681,nu=0.5", "--approx",
            "sigma2=1,alpha=0.07,nu=0.5", "--grid", "4", "--method", "plugin", "--summary-csv", "s.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["mloe"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["method"], "plugin");
    assert_eq!(v["loe"].as_array().unwrap().len(), 16);
    let s = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(s.starts_with("mloe,mmom,rmom,kl,mspe,clamp_count,method\n"));
    assert!(s.trim_end().ends_with(",plugin"));
}

#[test]
fn fit_echoes_tlr_settings_from_config() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "144", "9", "d.csv");
    std::fs::write(dir.path().join("tlr.cfg"), "# tlr fit\nnb = 36\ntlr_max_rank = 30\ntlr_acc = 1e-7\nopt_tol = 1e-5\n").unwrap();
    let o = geoassess(&["fit", "--method", "tlr", "--config", "tlr.cfg", "d.csv"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["echo"]["nb"], 36);
    assert_eq!(v["echo"]["tlr_max_rank"], 30);
    assert_eq!(v["echo"]["tlr_acc"], 1e-7);
    assert_eq!(v["echo"]["opt_tol"], 1e-5);
    assert_eq!(v["result"]["backend"], "tlr");
    // flags override the file
    let o = geoassess(&["fit", "--method", "tlr", "--config", "tlr.cfg", "--opt-tol", "1e-3", "d.csv"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["echo"]["opt_tol"], 1e-3);
}

#[test]
fn predict_writes_prediction_csv() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "100", "2", "d.csv");
    let o = geoassess(&["predict", "--data", "d.csv", "--params", "sigma2=1,eff_range=0.2,nu=0.5", "--grid", "3"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,y,pred,mse");
    assert_eq!(lines.len(), 10);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(geoassess(&["simulate", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(geoassess(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(geoassess(&["fit", "missing.csv"], dir.path()).status.code(), Some(1));
    assert_eq!(geoassess(&["--help"], dir.path()).status.code(), Some(0));
    simulate(dir.path(), "144", "4", "d.csv");
    // tile rank cap of 1 cannot hold the off-diagonal tiles: numerical failure
    let o = geoassess(&["fit", "--method", "tlr", "--nb", "36", "--tlr-max-rank", "1", "--tlr-acc", "1e-12", "d.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn threads_env_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_geoassess"))
        .args(["simulate", "--n", "16", "--seed", "1"])
        .current_dir(dir.path())
        .env("GEOASSESS_THREADS", "2")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("threads = 2"));
    let o = Command::new(env!("CARGO_BIN_EXE_geoassess"))
        .args(["simulate", "--n", "16"])
        .current_dir(dir.path())
        .env("GEOASSESS_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
