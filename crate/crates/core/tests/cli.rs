use std::path::{Path, PathBuf};

use qmanifold::cli::config::ScenarioConfig;
use qmanifold::cli::observe::{known_observables, Observer};
use qmanifold::cli::{main_with_args, EXIT_CONFIG, EXIT_FAIL};

const FIG1: &str = include_str!("../configs/fig1_panel1.toml");

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("qmanifold").chain(args.iter().copied()))
}

fn fig1_file(dir: &Path) -> String {
    let path = dir.join("fig1_panel1.toml");
    std::fs::write(&path, FIG1).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_bit_reproducible_across_thread_counts() {
    let dir = scratch("repro");
    let cfg = fig1_file(&dir);
    let (a, b) = (dir.join("a"), dir.join("b"));
    let common = ["--config", &cfg, "--traj", "60", "--dt", "1e-3"];
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let mut args = vec!["simulate"];
        args.extend(common);
        args.extend(["--threads", threads, "--out", out.to_str().unwrap()]);
        // Certificates fail at this coarse step; only the data matter here.
        let code = run(&args);
        assert!(code == 0 || code == EXIT_FAIL);
    }
    let read = |d: &Path| std::fs::read(d.join("fig1_panel1_trajectories.csv")).unwrap();
    assert!(!read(&a).is_empty());
    assert_eq!(read(&a), read(&b));
}

#[test]
fn summary_round_trips_through_the_config_schema() {
    let dir = scratch("schema");
    let cfg = fig1_file(&dir);
    let out = dir.join("out");
    let code = run(&["simulate", "--config", &cfg, "--traj", "60", "--dt", "1e-3", "--seed", "99", "--out", out.to_str().unwrap()]);
    assert!(code == 0 || code == EXIT_FAIL);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fig1_panel1_summary.json")).unwrap()).unwrap();
    let back: ScenarioConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    back.validate().unwrap();
    assert_eq!(back.run.seed, 99);
    assert_eq!(back.run.n_traj, 60);
    assert_eq!(summary["n_traj"], 60);
    assert_eq!(summary["n_failed"], 0);
    let mut original = ScenarioConfig::from_toml(FIG1).unwrap();
    original.run.seed = 99;
    original.rank.seed = 99;
    original.run.n_traj = 60;
    original.run.dt = 1e-3;
    assert_eq!(serde_json::to_value(&original).unwrap(), summary["config"]);
}

#[test]
fn csv_has_one_row_per_trajectory_and_snapshot() {
    let dir = scratch("csv");
    let cfg = fig1_file(&dir);
    let out = dir.join("out");
    run(&["simulate", "--config", &cfg, "--traj", "50", "--dt", "1e-3", "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(out.join("fig1_panel1_trajectories.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.first(), Some(&"traj_id"));
    assert_eq!(header.get(1), Some(&"t"));
    assert_eq!(header.last(), Some(&"error"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 50 * 2);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));
}

#[test]
fn coarse_step_fails_the_collapse_certificate() {
    let dir = scratch("certificate");
    let cfg = fig1_file(&dir);
    let out = dir.join("out");
    assert_eq!(run(&["simulate", "--config", &cfg, "--traj", "60", "--dt", "1e-3", "--out", out.to_str().unwrap()]), EXIT_FAIL);
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let dir = scratch("errors");
    assert_eq!(run(&["simulate", "--config", dir.join("missing.toml").to_str().unwrap()]), EXIT_CONFIG);
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, FIG1.replace("eta = [0.8]", "eta = [1.8]")).unwrap();
    assert_eq!(run(&["simulate", "--config", bad.to_str().unwrap()]), EXIT_CONFIG);
    let cfg = fig1_file(&dir);
    assert_eq!(run(&["simulate", "--config", &cfg, "--dt=-1"]), EXIT_CONFIG);
    assert_eq!(run(&["simulate", "--config", &cfg, "--threads", "0"]), EXIT_CONFIG);
    assert_eq!(run(&["emission-check", "--config", &cfg]), EXIT_CONFIG);
    assert_eq!(run(&["no-such-command"]), EXIT_CONFIG);
}

#[test]
fn rank_command_writes_a_report() {
    let dir = scratch("rank");
    let cfg = fig1_file(&dir);
    let out = dir.join("out");
    assert_eq!(run(&["rank", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fig1_panel1_rank.json")).unwrap()).unwrap();
    assert_eq!(rep["M"], 1);
    assert_eq!(rep["converged"], true);
}

#[test]
fn observers_reject_unknown_or_inapplicable_names() {
    let built = ScenarioConfig::from_toml(FIG1).unwrap().build().unwrap();
    assert!(Observer::new(&built, &["populations".into()]).is_ok());
    assert!(Observer::new(&built, &["no_such_group".into()]).is_err());
    assert!(Observer::new(&built, &["kernel".into()]).is_err());
    assert!(known_observables().contains(&"c_ratios"));
}

#[test]
fn c_ratio_of_the_pure_initial_state_is_one() {
    let built = ScenarioConfig::from_toml(FIG1).unwrap().build().unwrap();
    let obs = Observer::new(&built, &["c_ratios".into()]).unwrap();
    let vals = obs.eval(&built.rho0, None).unwrap();
    assert_eq!(obs.labels(), ["c_0_1", "c_0_2", "c_1_2"]);
    assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-12));
}
