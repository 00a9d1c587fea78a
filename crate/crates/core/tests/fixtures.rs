//! Shipped problem files and frozen reference values.

use std::path::PathBuf;

use codesign_core::blp::{enumerate_optimum, solve, SolverConfig};
use codesign_core::catalog::{DesignSpace, Feature, FeatureMatrix};
use codesign_core::expr::{brute_force_optimum, evaluate_choices, Evaluator};
use codesign_core::lower::lower;
use codesign_core::problem_file::{load_problem, Problem, Template};
use codesign_core::problems::{exact_vmax, team_summary, DroneParams};
use codesign_core::solution::Status;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../problems")
        .join(name)
}

fn load(name: &str) -> Problem {
    load_problem(&fixture(name), &[]).unwrap()
}

fn names(space: &DesignSpace, choices: &[Option<usize>]) -> Vec<Option<String>> {
    space
        .modules()
        .iter()
        .zip(choices)
        .map(|(m, c)| c.map(|j| m.component_names()[j].clone()))
        .collect()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn single(id: &str, features: &[&str], values: &[f64]) -> FeatureMatrix {
    let features = features.iter().map(|f| Feature::parse(f)).collect();
    FeatureMatrix::new(id, features, vec![(format!("{id}0"), values.to_vec())]).unwrap()
}

#[test]
fn exact_vmax_matches_the_closed_form_oracle() {
    // Per-motor thrust 5 N, frame length 0.22 m, total mass 1 kg.
    let space = DesignSpace::new(vec![
        single("motor", &["weight", "thrust"], &[0.125, 5.0]),
        single("frame", &["weight", "length"], &[0.2, 0.22]),
        single("camera", &["weight"], &[0.1]),
        single("computer", &["weight"], &[0.1]),
        single("battery", &["weight"], &[0.1]),
    ])
    .unwrap();
    let v = exact_vmax(&space, &[Some(0); 5], &DroneParams::default()).unwrap();
    assert!(rel_close(v, 30.679236829136304, 1e-12), "{v}");
}

#[test]
fn drone_fixture_has_one_feasible_design() {
    let problem = load("drone.toml");
    let Template::Drone(params) = &problem.template else {
        panic!("drone template expected")
    };
    let space = &problem.spec.space;
    assert_eq!(space.design_count(), 72);
    let ev = Evaluator::new(&problem.spec).unwrap();
    let feasible: Vec<u128> = (0..72)
        .filter(|&i| ev.check(&space.design_at(i)).unwrap().is_feasible())
        .collect();
    assert_eq!(feasible.len(), 1);
    let choices = space.design_at(feasible[0]);
    let expected = ["m_light", "f_wide", "c_fast", "nav_pro", "b_2600"].map(|s| Some(s.to_string()));
    assert_eq!(names(space, &choices), expected);

    let v = exact_vmax(space, &choices, params).unwrap();
    assert!(rel_close(v, 35.898499176627816, 1e-12), "{v}");
    let surrogate = problem.spec.objectives[0].surrogate.as_ref().unwrap();
    let s = evaluate_choices(space, &surrogate.expr, &choices).unwrap();
    assert!(rel_close(s, 24.962399041030146, 1e-12), "{s}");
    assert_eq!(ev.cost(&choices).unwrap().unwrap(), 645.0);
}

#[test]
fn drone_fixture_solve_finds_the_feasible_design() {
    let problem = load("drone.toml");
    let (inst, report) = lower(&problem.spec).unwrap();
    assert!(!report.is_exact());
    let got = solve(&inst, &SolverConfig::default()).unwrap();
    assert_eq!(got.status, Status::Optimal);
    let want = brute_force_optimum(&problem.spec, 1_000).unwrap();
    assert_eq!(got.choices, want.design.map(|d| d.choices()));
}

#[test]
fn drone_catalog_fixture_solve_agrees_with_enumeration() {
    let problem = load("drone_catalog.toml");
    assert_eq!(problem.spec.space.design_count(), 24_480);
    let (inst, _) = lower(&problem.spec).unwrap();
    let got = solve(&inst, &SolverConfig::default()).unwrap();
    let want = enumerate_optimum(&inst, 1_000_000).unwrap();
    assert_eq!(got.status, Status::Optimal);
    assert_eq!(got.choices, want.choices);
    let choices = got.choices.unwrap();
    let expected = [
        "motor_15",
        "frame_180",
        "camera_150fps",
        "computer_200",
        "battery_3500_04",
    ]
    .map(|s| Some(s.to_string()));
    assert_eq!(names(&problem.spec.space, &choices), expected);
    assert!(Evaluator::new(&problem.spec)
        .unwrap()
        .check(&choices)
        .unwrap()
        .is_feasible());
}

#[test]
fn empty_constraints_picks_the_best_of_each_module() {
    let problem = load("empty_constraints.toml");
    let (inst, _) = lower(&problem.spec).unwrap();
    let got = solve(&inst, &SolverConfig::default()).unwrap();
    let expected = ["m2", "f2"].map(|s| Some(s.to_string()));
    assert_eq!(names(&problem.spec.space, &got.choices.unwrap()), expected);
    assert!(rel_close(got.objective_values[0], 8.9, 1e-12));
}

fn transport_team(name: &str, overrides: &[(String, f64)]) -> Vec<codesign_core::problems::RobotSummary> {
    let problem = load_problem(&fixture(name), overrides).unwrap();
    let (inst, _) = lower(&problem.spec).unwrap();
    let got = solve(&inst, &SolverConfig::default()).unwrap();
    assert_eq!(got.status, Status::Optimal);
    let choices = got.choices.unwrap();
    assert!(Evaluator::new(&problem.spec)
        .unwrap()
        .check(&choices)
        .unwrap()
        .is_feasible());
    team_summary(&problem.spec.space, &choices).unwrap()
}

#[test]
fn light_transport_needs_two_sensing_robots() {
    let team = transport_team("transport.toml", &[]);
    assert_eq!(team.len(), 2);
    assert!(team.iter().all(|r| r.sensor.is_some()));
}

#[test]
fn heavy_transport_adds_sensorless_carriers() {
    let team = transport_team("transport_80kg.toml", &[]);
    assert_eq!(team.len(), 5);
    assert!(team.iter().filter(|r| r.sensor.is_none()).count() >= 1);
    assert!(team.iter().map(|r| r.push_margin).sum::<f64>() >= 80.0);
}

#[test]
fn weight_override_matches_the_heavy_fixture() {
    let light = transport_team("transport.toml", &[("weight".to_string(), 80.0)]);
    let heavy = transport_team("transport_80kg.toml", &[]);
    assert_eq!(light.len(), heavy.len());
}
