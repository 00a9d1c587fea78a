//! Random problem generators and independent oracles shared by the
//! integration tests.

#![allow(dead_code)]

use codesign_core::catalog::{DesignSpace, Feature, FeatureMatrix};
use codesign_core::expr::{
    feat, sel, unary, ColumnFn, CompatRule, Constraint, DesignSpec, FeatureExpr, Objective, Polarity, Sense,
};
use codesign_core::problems::{build_transport_spec, TransportCatalogs, TransportParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const FEATURES: [&str; 3] = ["a", "b", "c"];

/// Up to `max_modules` modules of up to `max_components` components with
/// features `a`, `b`, `c`. Integer values make lexicographic ties common.
pub fn random_space(rng: &mut TestRng, max_modules: usize, max_components: usize, optional: bool) -> DesignSpace {
    let n = rng.gen_range(1..=max_modules);
    let modules = (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=max_components);
            let columns = (0..k)
                .map(|j| {
                    (
                        format!("m{i}c{j}"),
                        FEATURES.iter().map(|_| rng.gen_range(1..=9) as f64).collect(),
                    )
                })
                .collect();
            let m = FeatureMatrix::new(
                format!("m{i}"),
                FEATURES.iter().map(|f| Feature::parse(f)).collect(),
                columns,
            )
            .unwrap();
            m.with_optional(optional && rng.gen_bool(0.3))
        })
        .collect();
    DesignSpace::new(modules).unwrap()
}

/// Positive real-valued features, so products and quotients are never tied.
pub fn random_positive_space(rng: &mut TestRng, max_modules: usize, max_components: usize) -> DesignSpace {
    let n = rng.gen_range(2..=max_modules);
    let modules = (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=max_components);
            let columns = (0..k)
                .map(|j| {
                    (
                        format!("m{i}c{j}"),
                        FEATURES.iter().map(|_| rng.gen_range(0.1..10.0)).collect(),
                    )
                })
                .collect();
            FeatureMatrix::new(
                format!("m{i}"),
                FEATURES.iter().map(|f| Feature::parse(f)).collect(),
                columns,
            )
            .unwrap()
        })
        .collect();
    DesignSpace::new(modules).unwrap()
}

fn ids(space: &DesignSpace) -> Vec<String> {
    space.modules().iter().map(|m| m.module_id().to_string()).collect()
}

fn required(space: &DesignSpace) -> Vec<String> {
    space
        .modules()
        .iter()
        .filter(|m| !m.is_optional())
        .map(|m| m.module_id().to_string())
        .collect()
}

fn pick<'a>(rng: &mut TestRng, items: &'a [String]) -> &'a str {
    items.choose(rng).expect("nonempty")
}

fn linear_expr(rng: &mut TestRng, space: &DesignSpace) -> FeatureExpr {
    let modules = ids(space);
    let terms = rng.gen_range(1..=modules.len().min(3));
    FeatureExpr::sum((0..terms).map(|_| {
        let m = pick(rng, &modules);
        let f = FEATURES.choose(rng).unwrap();
        feat(m, f).scaled(rng.gen_range(-3..=3) as f64)
    }))
}

fn columnwise_expr(rng: &mut TestRng, space: &DesignSpace) -> FeatureExpr {
    let modules = ids(space);
    let m = pick(rng, &modules);
    let func = match rng.gen_range(0..3) {
        0 => ColumnFn::product_of(&["a", "b"]),
        1 => ColumnFn::power_of("c", 2.0),
        _ => ColumnFn::power_of("a", 0.5),
    };
    unary(m, func).scaled(rng.gen_range(-2..=2) as f64) + linear_expr(rng, space)
}

/// `f(m1)·g(m2)/h(m3)` over distinct required modules, or `None` when fewer
/// than two modules are required.
fn rational_expr(rng: &mut TestRng, space: &DesignSpace) -> Option<FeatureExpr> {
    let mut modules = required(space);
    if modules.len() < 2 {
        return None;
    }
    modules.shuffle(rng);
    let mut e = feat(&modules[0], FEATURES.choose(rng).unwrap()) * feat(&modules[1], FEATURES.choose(rng).unwrap());
    if modules.len() > 2 && rng.gen_bool(0.5) {
        e = e / feat(&modules[2], FEATURES.choose(rng).unwrap());
    }
    Some(e)
}

/// Right-hand side that a random design meets with `slack`.
fn rhs_at(rng: &mut TestRng, space: &DesignSpace, lhs: &FeatureExpr, slack: f64) -> f64 {
    let i = rng.gen_range(0..space.design_count());
    let v = codesign_core::expr::evaluate_choices(space, lhs, &space.design_at(i)).unwrap();
    v + slack
}

/// A random specification drawn from linear, columnwise, log-rational and
/// compatibility families with one or two lexicographic objectives.
pub fn random_spec(rng: &mut TestRng) -> DesignSpec {
    let space = random_space(rng, 4, 5, true);
    let mut spec = DesignSpec::new(space.clone());
    let levels = rng.gen_range(1..=2);
    for l in 0..levels {
        let e = if rng.gen_bool(0.5) {
            linear_expr(rng, &space)
        } else {
            columnwise_expr(rng, &space)
        };
        spec = spec.maximize(Objective::new(format!("obj{l}"), e));
    }
    let rows = rng.gen_range(0..=6);
    for r in 0..rows {
        let label = format!("row{r}");
        let slack = rng.gen_range(-2..=4) as f64;
        match rng.gen_range(0..5) {
            0 => {
                let lhs = linear_expr(rng, &space);
                let rhs = rhs_at(rng, &space, &lhs, slack);
                spec = spec.subject_to(Constraint::le(label, lhs, rhs));
            }
            1 => {
                let lhs = columnwise_expr(rng, &space);
                let rhs = rhs_at(rng, &space, &lhs, slack);
                spec = spec.subject_to(Constraint::le(label, lhs, rhs));
            }
            2 => match rational_expr(rng, &space) {
                Some(lhs) => {
                    let rhs = rhs_at(rng, &space, &lhs, slack.max(0.0) * 0.5);
                    spec = spec.subject_to(Constraint::le(label, lhs, rhs));
                }
                None => {
                    let lhs = linear_expr(rng, &space);
                    let rhs = rhs_at(rng, &space, &lhs, slack);
                    spec = spec.subject_to(Constraint::le(label, lhs, rhs));
                }
            },
            3 => {
                let m = space.modules().choose(rng).unwrap();
                let names = m.component_names();
                let k = rng.gen_range(1..=names.len());
                let subset: Vec<&String> = names.choose_multiple(rng, k).collect();
                let lhs = sel(m.module_id(), &subset);
                spec = spec.subject_to(Constraint::new(label, lhs, Sense::Eq, 1.0));
            }
            _ => {
                let modules = space.modules();
                if modules.len() < 2 {
                    continue;
                }
                let two: Vec<&FeatureMatrix> = modules.choose_multiple(rng, 2).collect();
                let (a, b) = (two[0], two[1]);
                let k = rng.gen_range(1..=b.len());
                spec = spec.compat(CompatRule {
                    label,
                    a: a.module_id().to_string(),
                    component: a.component_names().choose(rng).unwrap().clone(),
                    b: b.module_id().to_string(),
                    subset: b.component_names().choose_multiple(rng, k).cloned().collect(),
                    polarity: if rng.gen_bool(0.5) {
                        Polarity::Compatible
                    } else {
                        Polarity::Incompatible
                    },
                });
            }
        }
    }
    spec
}

/// A spec maximizing a random rational objective over positive features,
/// optionally with linear rows.
pub fn random_rational_spec(rng: &mut TestRng) -> DesignSpec {
    let space = random_positive_space(rng, 4, 5);
    let objective = rational_expr(rng, &space).expect("at least two required modules");
    let objective = if rng.gen_bool(0.3) { -objective } else { objective };
    let mut spec = DesignSpec::new(space.clone()).maximize(Objective::new("ratio", objective));
    for r in 0..rng.gen_range(0..=2) {
        let lhs = linear_expr(rng, &space);
        let rhs = rhs_at(rng, &space, &lhs, 0.5);
        spec = spec.subject_to(Constraint::le(format!("row{r}"), lhs, rhs));
    }
    spec
}

/// Random transport catalogs with `per_module` options per module type.
pub fn random_transport_catalogs(rng: &mut TestRng, per_module: usize) -> TransportCatalogs {
    let matrix = |rng: &mut TestRng, id: &str, features: &[&str], ranges: &[(f64, f64)]| {
        let columns = (0..per_module)
            .map(|j| {
                let v = ranges
                    .iter()
                    .map(|&(lo, hi)| (rng.gen_range(lo..hi) * 100.0).round() / 100.0)
                    .collect();
                (format!("{id}{j}"), v)
            })
            .collect();
        FeatureMatrix::new(id, features.iter().map(|f| Feature::parse(f)).collect(), columns).unwrap()
    };
    TransportCatalogs {
        frame: matrix(rng, "frame", &["weight", "area"], &[(0.5, 2.0), (0.04, 0.1)]),
        motor: matrix(
            rng,
            "motor",
            &["push", "weight", "power", "area"],
            &[(2.0, 15.0), (0.3, 1.5), (20.0, 150.0), (0.01, 0.04)],
        ),
        battery: matrix(
            rng,
            "battery",
            &["weight", "power", "area"],
            &[(0.3, 1.5), (40.0, 200.0), (0.01, 0.04)],
        ),
        sensor: matrix(
            rng,
            "sensor",
            &["coverage", "weight", "power", "area"],
            &[(0.1, 0.6), (0.1, 0.6), (5.0, 30.0), (0.01, 0.03)],
        ),
    }
}

pub fn transport_spec(c: &TransportCatalogs, p: &TransportParams) -> DesignSpec {
    build_transport_spec(c, p).unwrap()
}

/// One robot's `(push - weight, coverage)` for every locally feasible
/// configuration (power and area within budget, own weight carried).
pub fn robot_configs(c: &TransportCatalogs) -> Vec<(f64, f64)> {
    let get = |m: &FeatureMatrix, f: &str, j: usize| m.row(f).unwrap()[j];
    let mut out = Vec::new();
    for fr in 0..c.frame.len() {
        for mo in 0..c.motor.len() {
            for ba in 0..c.battery.len() {
                for se in (0..c.sensor.len()).map(Some).chain([None]) {
                    let s = |f: &str| se.map_or(0.0, |j| get(&c.sensor, f, j));
                    let weight = get(&c.frame, "weight", fr)
                        + get(&c.motor, "weight", mo)
                        + get(&c.battery, "weight", ba)
                        + s("weight");
                    let push = get(&c.motor, "push", mo);
                    let power = get(&c.motor, "power", mo) + s("power") <= get(&c.battery, "power", ba);
                    let area = get(&c.motor, "area", mo) + get(&c.battery, "area", ba) + s("area")
                        <= get(&c.frame, "area", fr);
                    if power && area && weight <= push {
                        out.push((push - weight, s("coverage")));
                    }
                }
            }
        }
    }
    out
}

/// Smallest team (1..=k_max) whose members, each in a locally feasible
/// configuration, push at least `object_weight` and cover at least
/// `threshold` in total. Searches multisets of Pareto-optimal configurations.
pub fn min_team_size(c: &TransportCatalogs, object_weight: f64, threshold: f64, k_max: usize) -> Option<usize> {
    let configs = robot_configs(c);
    let mut pareto: Vec<(f64, f64)> = configs
        .iter()
        .copied()
        .filter(|&(m, cov)| {
            !configs
                .iter()
                .any(|&(m2, c2)| (m2 >= m && c2 > cov) || (m2 > m && c2 >= cov))
        })
        .collect();
    pareto.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pareto.dedup();
    let tol = 1e-9;
    let meets =
        |margin: f64, cov: f64| margin >= object_weight - tol * object_weight.abs().max(1.0) && cov >= threshold - tol;
    fn search(p: &[(f64, f64)], from: usize, left: usize, acc: (f64, f64), meets: &dyn Fn(f64, f64) -> bool) -> bool {
        if left == 0 {
            return meets(acc.0, acc.1);
        }
        (from..p.len()).any(|i| search(p, i, left - 1, (acc.0 + p[i].0, acc.1 + p[i].1), meets))
    }
    (1..=k_max).find(|&t| search(&pareto, 0, t, (0.0, 0.0), &meets))
}
