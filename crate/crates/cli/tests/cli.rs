use std::path::PathBuf;
use std::process::{Command, Output};

fn excbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_excbf"))
        .args(args)
        .output()
        .expect("run excbf")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn scenario(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.toml"));
    p.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/fixtures/{name}.toml"));
    p.to_string_lossy().into_owned()
}

/// Value after `key ` on the first line that starts with it.
fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no {key} in:\n{text}"))
}

#[test]
fn single_trial_bench_writes_four_matching_records() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = excbf(&["bench", "--m", "2", "--p", "1", "--trials", "1", "--seed", "4", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("# explicit-cbf bench 1\n# seed 4\n"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 4);
    let checksums: Vec<&str> = rows.iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    assert!(checksums.iter().all(|c| *c == checksums[0]));
    assert!(stdout(&out).contains("solver_enumerate"));
}

#[test]
fn bench_is_reproducible_apart_from_timings() {
    let dir = tempfile::tempdir().unwrap();
    let strip = |name: &str| {
        let path = dir.path().join(name);
        let out = excbf(&["bench", "--m", "2,3", "--p", "2,8", "--trials", "20", "--seed", "9", "--out", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| {
                if l.starts_with('#') || l.starts_with("m,") {
                    return l.to_string();
                }
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{},{},{},{},{}", f[0], f[1], f[2], f[3], f[6], f[7])
            })
            .collect::<Vec<_>>()
    };
    let first = strip("a.csv");
    assert_eq!(first.len(), 5 + 4 * 20 * 4 + first.iter().filter(|l| l.starts_with("# skipped")).count());
    assert_eq!(first, strip("b.csv"));
}

#[test]
fn oversized_bench_exceeds_the_budget() {
    let out = excbf(&["bench", "--m", "10", "--p", "40", "--trials", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("budget"));
}

#[test]
fn zero_trials_is_a_validation_error() {
    let out = excbf(&["bench", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_validation_status() {
    assert_eq!(excbf(&["bench", "--bogus"]).status.code(), Some(1));
    assert_eq!(excbf(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(excbf(&["simulate"]).status.code(), Some(1));
    assert!(excbf(&["--help"]).status.success());
}

#[test]
fn aircraft_simulation_reports_a_sparse_safe_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("traj.csv");
    let out = excbf(&["simulate", &scenario("aircraft"), "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(field(&text, "total_steps"), "3000");
    let calls: usize = field(&text, "theta_calls").parse().unwrap();
    assert!(calls <= 150);
    let h: f64 = field(&text, "min_barrier").split(' ').next().unwrap().parse().unwrap();
    assert!(h >= -1e-3);

    let traj = std::fs::read_to_string(&csv).unwrap();
    let header = traj.lines().next().unwrap();
    assert!(header.starts_with("t,x_0,"));
    assert!(header.ends_with(",active_set,theta_called"));
    assert_eq!(traj.lines().count(), 3001);
    let called = traj.lines().skip(1).filter(|l| l.ends_with(",1")).count();
    assert_eq!(called, calls);
}

#[test]
fn both_oracles_simulate_the_same_trajectory() {
    let run = |theta: &str| {
        let out = excbf(&["simulate", &scenario("double_integrator"), "--theta", theta]);
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        (field(&text, "theta_calls").to_string(), field(&text, "min_barrier").to_string())
    };
    assert_eq!(run("enumerate"), run("activeset"));
}

#[test]
fn zero_barrier_simulation_never_needs_the_oracle_twice() {
    let out = excbf(&["simulate", &scenario("zero_barrier")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let calls: usize = field(&stdout(&out), "theta_calls").parse().unwrap();
    assert!(calls <= 1);
}

#[test]
fn multi_agent_simulation_keeps_clearance() {
    let out = excbf(&["simulate", &scenario("multi_agent")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let clearance: f64 = field(&stdout(&out), "worst_clearance").split(' ').next().unwrap().parse().unwrap();
    assert!(clearance > 0.0);
}

#[test]
fn contradictory_walls_exit_infeasible_with_the_step() {
    let out = excbf(&["simulate", &fixture("infeasible")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("step 0"));
}

#[test]
fn one_dimensional_regions_match_hand_values() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("regions.txt");
    let out = excbf(&["regions", &scenario("one_dimensional"), "--out", table.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(field(&text, "dims"), "n=1 m=1 p=1");
    assert!(field(&text, "regions").starts_with("2 "));
    assert_eq!(field(&text, "lipschitz"), "1");
    assert!(std::fs::metadata(&table).unwrap().len() > 0);
}

#[test]
fn zero_barrier_has_a_single_region() {
    let out = excbf(&["regions", &scenario("zero_barrier")]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(field(&stdout(&out), "regions").starts_with("1 "));
}

#[test]
fn non_affine_scenarios_are_refused_for_regions() {
    let out = excbf(&["regions", &scenario("multi_agent")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("not affine"));
}

#[test]
fn shipped_scenarios_pass_check() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let out = excbf(&["check", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", path.display(), stdout(&out));
        assert_eq!(stdout(&out).matches("PASS").count(), 4);
        n += 1;
    }
    assert!(n >= 6);
}

#[test]
fn flipped_gradient_is_named() {
    let out = excbf(&["check", &fixture("bad_gradient")]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL gradient"));
    assert!(text.contains("flipped_wall"));
}

#[test]
fn indefinite_weight_fails_only_its_own_check() {
    let out = excbf(&["check", &fixture("indefinite_weight")]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL weight positive definite"));
    assert!(text.contains("PASS gradient"));
}

#[test]
fn dimension_errors_are_listed_together() {
    let out = excbf(&["check", &fixture("bad_dimensions")]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    let audit = text.lines().find(|l| l.starts_with("FAIL dimension audit")).unwrap();
    assert!(audit.contains("simulation.x0"));
    assert!(audit.contains("wall"));
}

#[test]
fn missing_scenario_file_is_a_validation_error() {
    let out = excbf(&["simulate", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));
}
