use std::fs;
use std::path::Path;
use std::process::Command;

use sls_grid::harness::{emit_report, render_from_dir, run_benchmark, ControllerKind, SimConfig};

fn small() -> SimConfig {
    SimConfig {
        rows: 3,
        cols: 3,
        horizon: 8,
        t_mpc: 4,
        num_periods: 3,
        seed: 40,
        ..SimConfig::default()
    }
}

const DETERMINISTIC: [&str; 2] = ["costs.csv", "summary.csv"];

fn run_into(dir: &Path, threads: usize) {
    let cfg = small();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let (report, results) = pool.install(|| run_benchmark(&cfg, 3)).unwrap();
    emit_report(&report, &results, dir, cfg.probe()).unwrap();
}

#[test]
fn reports_are_byte_identical_across_runs_and_pool_sizes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(a.path(), 1);
    run_into(b.path(), 3);
    let mut names: Vec<String> = DETERMINISTIC.iter().map(|s| s.to_string()).collect();
    names.extend((0..3).flat_map(|t| [format!("traj_{t}.csv"), format!("traj_{t}.svg")]));
    names.push("summary.svg".into());
    for name in names {
        let (x, y) = (fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap());
        assert!(x == y, "{name} differs between runs");
    }
    // Wall times are not reproducible and live in their own file.
    assert!(a.path().join("timing.csv").exists());
}

#[test]
fn trajectory_table_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), 1);
    let text = fs::read_to_string(dir.path().join("traj_1.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,node,theta_ref,w,"));
    for kind in ControllerKind::ALL {
        assert!(header.contains(&format!("{}_theta", kind.name())));
    }
    assert_eq!(lines.count(), small().sim_length());
}

#[test]
fn report_rerenders_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), 1);
    let before = fs::read(dir.path().join("summary.csv")).unwrap();
    fs::remove_file(dir.path().join("summary.csv")).unwrap();
    fs::remove_file(dir.path().join("traj_0.svg")).unwrap();
    let report = render_from_dir(dir.path()).unwrap();
    assert_eq!(report.trials, 3);
    assert_eq!(fs::read(dir.path().join("summary.csv")).unwrap(), before);
    assert!(dir.path().join("traj_0.svg").exists());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = small();
    cfg.d = -1;
    cfg.admm_relaxation = 1.3;
    let back = SimConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert!(SimConfig::from_toml("no_such_key = 1").is_err());
    let partial = SimConfig::from_toml("rows = 2\nseed = 9").unwrap();
    assert_eq!((partial.rows, partial.seed, partial.cols), (2, 9, SimConfig::default().cols));
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sls-grid"))
}

#[test]
fn every_config_key_has_a_flag() {
    let out = cli().arg("--help").output().unwrap();
    let help = String::from_utf8(out.stdout).unwrap();
    let table: toml::Table = SimConfig::default().to_toml().parse().unwrap();
    for key in table.keys() {
        let flag = format!("--{}", key.replace('_', "-"));
        assert!(help.contains(&flag), "no flag for {key}");
    }
}

#[test]
fn cli_simulate_honors_file_flags_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, small().to_toml()).unwrap();
    let out_dir = dir.path().join("env-out");

    let status = cli()
        .args(["simulate", "--config"])
        .arg(&cfg_path)
        .args(["--seed", "7", "--disturbance-std", "0.02"])
        .env("SLS_GRID_OUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let used = SimConfig::load(&out_dir.join("config.toml")).unwrap();
    assert_eq!(used.seed, 7);
    assert_eq!(used.disturbance_std, 0.02);
    assert_eq!(used.horizon, small().horizon);
    assert!(out_dir.join("traj_0.csv").exists());

    let status = cli().arg("report").env("SLS_GRID_OUT_DIR", &out_dir).output().unwrap();
    assert!(status.status.success());

    let bad = cli()
        .args(["simulate", "--dt", "-1"])
        .env("SLS_GRID_OUT_DIR", dir.path().join("bad"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("dt"));
}

#[test]
fn cli_synth_writes_a_reloadable_response() {
    let dir = tempfile::tempdir().unwrap();
    let status = cli()
        .args(["synth", "--rows", "2", "--cols", "3", "--horizon", "6", "--t-mpc", "6", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let plant = sls_grid::plant::PlantModel::from_text(&fs::read_to_string(dir.path().join("plant.toml")).unwrap()).unwrap();
    let resp = sls_grid::sls::SystemResponse::from_text(&fs::read_to_string(dir.path().join("response.txt")).unwrap()).unwrap();
    assert!(sls_grid::sls::validate_achievability(plant.system(), &resp).unwrap() < 1e-9);

    // A dumped plant can be fed back in.
    let again = tempfile::tempdir().unwrap();
    let status = cli()
        .args(["synth", "--horizon", "6", "--t-mpc", "3", "--plant"])
        .arg(dir.path().join("plant.toml"))
        .arg("--out")
        .arg(again.path())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}
