use std::path::Path;
use std::process::{Command, Output};

const TINY2: &str = "num_sensors = 2\nnum_users = 1\nbudget = 1\ndelta_max = 3\nbattery_capacity = 1\n\
                     request_prob = 1.0\nharvest_rates = [1.0, 1.0]\nhorizon = 2000\nepisodes = 2\n";

fn aoi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi")).args(args).arg("--out").arg(dir.join("out")).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_exact_prints_the_optimal_cost() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY2);
    let out = aoi(dir.path(), &["solve-exact", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let line = stdout(&out).lines().next().unwrap().to_string();
    let cost: f64 = line.strip_prefix("optimal average cost ").unwrap().parse().unwrap();
    assert!((cost - 1.5).abs() < 1e-6);
    assert!(dir.path().join("out/exact_policy.csv").exists());
}

#[test]
fn solve_exact_refuses_large_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "num_sensors = 10\nnum_users = 3\nbudget = 1\ndelta_max = 64\nbattery_capacity = 7\nrequest_prob = 0.6\n",
    );
    let out = aoi(dir.path(), &["solve-exact", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solve-relaxed"));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY2}policies = [\"exact\", \"rtt\", \"greedy\"]\n"));
    for cmd in ["solve-exact", "solve-relaxed"] {
        assert_eq!(aoi(dir.path(), &[cmd, "--config", &cfg]).status.code(), Some(0));
    }
    let run = || {
        let out = aoi(dir.path(), &["simulate", "--config", &cfg, "--seed", "5"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join("out/simulate.csv")).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("config_hash,build_tag,policy,"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn greedy_only_needs_no_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY2);
    let out = aoi(dir.path(), &["simulate", "--config", &cfg, "--policy", "greedy"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("greedy"));
}

#[test]
fn missing_policy_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY2);
    let out = aoi(dir.path(), &["simulate", "--config", &cfg, "--policy", "rtt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solve-relaxed"));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(aoi(dir.path(), &["simulate", "--config", "/nonexistent.toml"]).status.code(), Some(1));
    let cfg = write_config(dir.path(), "num_sensors = 2\nbogus = 1\n");
    assert_eq!(aoi(dir.path(), &["simulate", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(aoi(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(aoi(dir.path(), &["simulate", "--policy", "best"]).status.code(), Some(1));
}

#[test]
fn analyze_and_region_map_pass_on_tiny2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY2);
    let out = aoi(dir.path(), &["region-map", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let map = std::fs::read_to_string(dir.path().join("out/region_map.csv")).unwrap();
    assert!(map.lines().next().unwrap().ends_with("age1,age2,age3"));
    let out = aoi(dir.path(), &["analyze", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).lines().any(|l| l.starts_with("PASS ordering")));
    assert!(!stdout(&out).contains("FAIL"));
}
