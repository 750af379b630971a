use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn colar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colar")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, "p = 30\nm = 30\nn = 150\nreps = 2\nadmm_max_outer = 200\n").unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let res = colar(&["--threads", "1", "simulate", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "setting,p,m,n,rep,loss_u_init,loss_v_init,loss_u_colar,loss_v_colar,chosen_b,converged,admm_iterations,error"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn single_rep_summary_matches_its_row() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("one.csv");
    let res = colar(&["simulate", "--config", &cfg, "--reps", "1", "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let text = fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let loss_u_colar: f64 = row[7].parse().unwrap();
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains(&format!("U-CoLaR {loss_u_colar:.4}")), "{stdout}");
}

#[test]
fn misspec_runs_with_overrides() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path());
    let res = colar(&["misspec", "--config", &cfg, "--scenario", "shared", "--lambda3", "0.2", "--reps", "1"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8(res.stdout).unwrap().contains("1 reps, 0 failed"));
}

#[test]
fn reduce_check_reports_and_signals_failures() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("checks.csv");
    let cfg = dir.path().join("fast.toml");
    fs::write(&cfg, "reps = 20\nspike_rows = 20\n").unwrap();
    let res = colar(&["reduce-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let report = fs::read_to_string(&out).unwrap();
    assert!(report.starts_with("check,detail,value,bound,pass"));
    assert!(report.lines().any(|l| l.starts_with("mu_zero,")));

    let strict = dir.path().join("strict.toml");
    fs::write(&strict, "reps = 20\nspike_rows = 20\nmax_tv_slope = -10.0\n").unwrap();
    let res = colar(&["reduce-check", "--config", strict.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8(res.stderr).unwrap().contains("FAIL tv_slope_null"));
}

#[test]
fn estimate_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let mut rng = colar::experiment::rep_rng(3, 0);
    let sigma = colar::Matrix::identity(12, 12);
    let profile = colar::SparsityProfile::new(vec![0, 1, 2], vec![3, 4, 5]);
    let model = colar::model::make_canonical_pair(&sigma, &sigma, &profile, &[0.9], &mut rng).unwrap();
    let data = colar::model::sample(&model, 300, &mut rng).unwrap();
    let (xp, yp) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    colar::linalg::save_matrix(&xp, &data.x).unwrap();
    colar::linalg::save_matrix(&yp, &data.y).unwrap();

    let out = dir.path().join("fit");
    let res = colar(&[
        "estimate",
        "--x",
        xp.to_str().unwrap(),
        "--y",
        yp.to_str().unwrap(),
        "--rank",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for file in ["u_hat.csv", "v_hat.csv", "u_init.csv", "v_init.csv", "metadata.csv"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    let u_hat = colar::linalg::load_matrix(out.join("u_hat.csv")).unwrap();
    let loss = colar::model::prediction_loss(&u_hat, &model.u, &sigma).unwrap();
    assert!(loss < 0.1, "loss {loss}");
}

#[test]
fn errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 3\n").unwrap();
    assert_eq!(colar(&["simulate", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(colar(&["estimate", "--x", "/nonexistent/x.csv", "--y", "/nonexistent/y.csv"]).status.code(), Some(1));
    let res = colar(&["simulate", "--config", bad.to_str().unwrap().replace("bad", "missing").as_str()]);
    assert_eq!(res.status.code(), Some(1));
}
