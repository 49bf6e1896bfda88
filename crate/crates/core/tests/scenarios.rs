mod common;

use explicit_cbf::affine::{enumerate_regions, grid_check, AffineProblem};
use explicit_cbf::oracle::subset_count;
use explicit_cbf::runtime::simulate;
use explicit_cbf::scenario::{self, AircraftConfig, ScenarioError};
use explicit_cbf::Tolerances;

#[test]
fn shipped_scenarios_pass_their_self_checks() {
    let all = common::shipped_scenarios();
    assert!(all.len() >= 6);
    for (name, sc) in &all {
        assert!(sc.self_check(0).is_empty(), "{name}");
        assert!(sc.problem.barriers().iter().all(|b| b.value(&sc.x0) >= 0.0), "{name} starts unsafe");
    }
}

#[test]
fn aircraft_file_spells_out_the_builtin_defaults() {
    let cfg = scenario::load_config(&common::scenario_dir().join("aircraft.toml")).unwrap();
    assert_eq!(cfg.aircraft, Some(AircraftConfig::default()));
    let sc = scenario::build(&cfg).unwrap();
    assert_eq!(sc.simulation_config().samples(), 3000);
    assert_eq!(sc.problem.decision_dim(), 12);
    assert_eq!(sc.problem.row_count(), 8);
}

fn aircraft_variant(extra: &str) -> String {
    format!(
        "schema_version = 1\nname = \"variant\"\nkind = \"builtin\"\nbuiltin = \"aircraft\"\n\
         [simulation]\ndt = 0.01\nhorizon = 30.0\n[aircraft]\n{extra}\n"
    )
}

#[test]
fn aircraft_yaw_rate_variant_stays_safe() {
    let sc = scenario::from_str(&aircraft_variant("lateral_output = \"yaw_rate\"\nlateral_limit = 0.1")).unwrap();
    assert!(sc.problem.barriers().iter().any(|b| b.name() == "yaw_rate_upper"));
    let traj = simulate(&sc.problem, &sc.x0, &sc.simulation_config()).unwrap();
    assert!(traj.min_barrier() >= -1e-3);
}

#[test]
fn aircraft_without_slacks_has_only_physical_inputs() {
    let sc = scenario::from_str(&aircraft_variant("slack_penalty = 0.0")).unwrap();
    assert_eq!(sc.problem.decision_dim(), 4);
    let traj = simulate(&sc.problem, &sc.x0, &sc.simulation_config()).unwrap();
    assert!(traj.min_barrier() >= -1e-3);
}

#[test]
fn aircraft_regions_cover_every_full_rank_subset() {
    let sc = common::load_shipped("aircraft");
    let tol = Tolerances::default();
    let problem = AffineProblem::from_filter_problem(&sc.problem, 0.0, 0).unwrap();
    let laws = enumerate_regions(&problem, &tol).unwrap();
    // Each slack column makes every subset of the eight rows full rank.
    assert_eq!(laws.len() as u128, subset_count(8, 8));
    let check = grid_check(&problem, &laws, &sc.x0, 0.5, 300, 3, &tol).unwrap();
    assert!(check.compared > 250);
    assert!(check.max_gap <= 1e-9);
}

#[test]
fn multi_agent_is_rejected_for_explicit_regions() {
    let sc = common::load_shipped("multi_agent");
    assert!(!sc.affine);
    assert_eq!(sc.problem.row_count(), 16 * 3 + 3 + 12);
}

const WALL: &str = r#"
schema_version = 1
name = "wall"
kind = "linear_affine"

[simulation]
dt = 0.01
horizon = 1.0
x0 = [0.5, 0.0]

[system]
a = [[0.0, 0.0], [0.0, 0.0]]
b = [[1.0, 0.0], [0.0, 1.0]]

[[barrier]]
name = "wall"
type = "affine"
c = [1.0, 0.0]
alpha = { kind = "linear", gain = 1.0 }
"#;

#[test]
fn wrong_gradient_sign_is_named() {
    let text = WALL.replace("c = [1.0, 0.0]", "c = [1.0, 0.0]\ngradient = [-1.0, 0.0]");
    let sc = scenario::from_str(&text).unwrap();
    let failures = sc.self_check(0);
    assert!(!failures.is_empty());
    assert!(failures.iter().all(|f| f.to_string().contains("wall")));
}

#[test]
fn indefinite_weight_is_reported() {
    let text = format!("{WALL}\n[weight]\nmatrix = [[1.0, 2.0], [2.0, 1.0]]\n");
    let cfg = scenario::parse_config(&text).unwrap();
    assert!(scenario::audit(&cfg).is_empty());
    assert!(scenario::check_weight(&cfg).is_err());
    assert!(matches!(scenario::build(&cfg), Err(ScenarioError::Frontend(_))));
}

#[test]
fn every_dimension_error_is_listed() {
    let text = WALL
        .replace("x0 = [0.5, 0.0]", "x0 = [0.5]")
        .replace("c = [1.0, 0.0]", "c = [1.0]")
        .replace("b = [[1.0, 0.0], [0.0, 1.0]]", "b = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]");
    let cfg = scenario::parse_config(&text).unwrap();
    let errs = scenario::audit(&cfg);
    assert_eq!(errs.len(), 3, "{errs:?}");
    assert!(errs.iter().any(|e| e.starts_with("simulation.x0")));
    assert!(errs.iter().any(|e| e.starts_with("system.b")));
    assert!(errs.iter().any(|e| e.contains("wall") && e.contains(".c")));
}

#[test]
fn parse_errors_point_at_the_line() {
    let text = WALL.replace("dt = 0.01", "dt = \"fast\"");
    let err = scenario::from_str(&text).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("line 7") || msg.contains("dt"), "{msg}");
}
