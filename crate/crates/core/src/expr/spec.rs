//! Problem statements over a design space, exact feasibility checks and the
//! enumeration oracle.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::{CompiledExpr, EvalError, FeatureExpr};
use crate::catalog::{CatalogError, DesignSpace, DesignVector};
use crate::lex::lex_argmax;
use crate::solution::{Slack, Solution, Status};

/// Relative tolerance used when checking a constraint exactly.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Le,
    Eq,
}

impl Sense {
    pub fn symbol(&self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
        }
    }
}

/// Constraints between the robot and the task (system) or between modules (implicit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstraintClass {
    System,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SurrogateKind {
    /// A lower bound on a maximized objective.
    SpeedLowerBound,
    /// An upper bound on the left-hand side of a `<=` constraint.
    Ic4UpperBound,
    /// An upper bound replacing a flight-time requirement.
    FlightTimeUpperBound,
}

impl SurrogateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SurrogateKind::SpeedLowerBound => "speed_lower_bound",
            SurrogateKind::Ic4UpperBound => "ic4_upper_bound",
            SurrogateKind::FlightTimeUpperBound => "flight_time_upper_bound",
        }
    }
}

/// A linearizable stand-in for an expression the lowering cannot handle exactly.
///
/// For an objective, `expr` is a lower bound of the exact objective on every
/// design (`rhs` is unused). For a constraint, `expr <= rhs` implies the exact
/// constraint, so every design it admits is exactly feasible.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    pub expr: FeatureExpr,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub label: String,
    pub expr: FeatureExpr,
    pub surrogate: Option<Surrogate>,
}

impl Objective {
    pub fn new(label: impl Into<String>, expr: FeatureExpr) -> Self {
        Self {
            label: label.into(),
            expr,
            surrogate: None,
        }
    }

    pub fn with_surrogate(mut self, kind: SurrogateKind, expr: FeatureExpr) -> Self {
        self.surrogate = Some(Surrogate { kind, expr, rhs: 0.0 });
        self
    }
}

/// `lhs (<= | =) rhs`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub label: String,
    pub class: ConstraintClass,
    pub lhs: FeatureExpr,
    pub sense: Sense,
    pub rhs: f64,
    pub surrogate: Option<Surrogate>,
}

impl Constraint {
    pub fn new(label: impl Into<String>, lhs: FeatureExpr, sense: Sense, rhs: f64) -> Self {
        Self {
            label: label.into(),
            class: ConstraintClass::System,
            lhs,
            sense,
            rhs,
            surrogate: None,
        }
    }

    pub fn le(label: impl Into<String>, lhs: FeatureExpr, rhs: f64) -> Self {
        Self::new(label, lhs, Sense::Le, rhs)
    }

    /// Parses `a <= b`, `a >= b` or `a = b`.
    pub fn parse(label: impl Into<String>, src: &str) -> Result<Self, super::ParseError> {
        let p = super::parse_constraint(src)?;
        Ok(Self::new(label, p.lhs, p.sense, p.rhs))
    }

    pub fn implicit(mut self) -> Self {
        self.class = ConstraintClass::Implicit;
        self
    }

    pub fn with_surrogate(mut self, kind: SurrogateKind, expr: FeatureExpr, rhs: f64) -> Self {
        self.surrogate = Some(Surrogate { kind, expr, rhs });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Polarity {
    Compatible,
    Incompatible,
}

/// Choosing `component` in module `a` requires (compatible) or forbids
/// (incompatible) a choice from `subset` in module `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatRule {
    pub label: String,
    pub a: String,
    pub component: String,
    pub b: String,
    pub subset: Vec<String>,
    pub polarity: Polarity,
}

/// Module `module` may only pick components from `subset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Restriction {
    pub label: String,
    pub module: String,
    pub subset: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("`{label}`: {source}")]
    Eval {
        label: String,
        #[source]
        source: EvalError,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("invalid specification: {0}")]
    Invalid(String),
}

/// A complete co-design problem: catalogs, lexicographic objectives and constraints.
#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub space: DesignSpace,
    /// Maximized in order; earlier levels dominate.
    pub objectives: Vec<Objective>,
    pub constraints: Vec<Constraint>,
    pub compat_rules: Vec<CompatRule>,
    pub restrictions: Vec<Restriction>,
    /// Reported alongside results; never optimized.
    pub cost: Option<FeatureExpr>,
}

impl DesignSpec {
    pub fn new(space: DesignSpace) -> Self {
        Self {
            space,
            objectives: Vec::new(),
            constraints: Vec::new(),
            compat_rules: Vec::new(),
            restrictions: Vec::new(),
            cost: None,
        }
    }

    pub fn maximize(mut self, objective: Objective) -> Self {
        self.objectives.push(objective);
        self
    }

    pub fn subject_to(mut self, constraint: Constraint) -> Self {
        self.constraints.push(constraint);
        self
    }

    pub fn compat(mut self, rule: CompatRule) -> Self {
        self.compat_rules.push(rule);
        self
    }

    pub fn restrict(mut self, restriction: Restriction) -> Self {
        self.restrictions.push(restriction);
        self
    }

    /// Resolves every name in the problem.
    pub fn validate(&self) -> Result<(), SpecError> {
        Evaluator::new(self).map(|_| ())
    }
}

/// What a [`ConstraintCheck`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckKind {
    Constraint(ConstraintClass),
    Compat,
    Restriction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub label: String,
    pub kind: CheckKind,
    pub lhs: f64,
    pub sense: Sense,
    pub rhs: f64,
    /// `rhs - lhs` for `<=`, `-|lhs - rhs|` for `=`.
    pub slack: f64,
    pub satisfied: bool,
}

impl ConstraintCheck {
    fn new(label: &str, kind: CheckKind, lhs: f64, sense: Sense, rhs: f64) -> Self {
        let tol = FEAS_TOL * 1f64.max(lhs.abs()).max(rhs.abs());
        let slack = match sense {
            Sense::Le => rhs - lhs,
            Sense::Eq => -(lhs - rhs).abs(),
        };
        Self {
            label: label.to_string(),
            kind,
            lhs,
            sense,
            rhs,
            slack,
            satisfied: slack >= -tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub checks: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn violated(&self) -> impl Iterator<Item = &ConstraintCheck> {
        self.checks.iter().filter(|c| !c.satisfied)
    }

    pub fn slacks(&self) -> Vec<Slack> {
        self.checks
            .iter()
            .map(|c| Slack {
                label: c.label.clone(),
                slack: c.slack,
            })
            .collect()
    }
}

/// A [`DesignSpec`] with every expression compiled, for repeated exact evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    spec: &'a DesignSpec,
    objectives: Vec<CompiledExpr>,
    constraints: Vec<CompiledExpr>,
    cost: Option<CompiledExpr>,
    compat: Vec<(usize, usize, usize, Vec<bool>)>,
    restrictions: Vec<(usize, Vec<bool>)>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a DesignSpec) -> Result<Self, SpecError> {
        let space = &spec.space;
        let compile = |label: &str, e: &FeatureExpr| {
            CompiledExpr::compile(space, e).map_err(|source| SpecError::Eval {
                label: label.to_string(),
                source,
            })
        };
        let objectives = spec
            .objectives
            .iter()
            .map(|o| {
                if let Some(s) = &o.surrogate {
                    compile(&o.label, &s.expr)?;
                }
                compile(&o.label, &o.expr)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let constraints = spec
            .constraints
            .iter()
            .map(|c| {
                if !c.rhs.is_finite() {
                    return Err(SpecError::Invalid(format!(
                        "`{}` has a non-finite right-hand side",
                        c.label
                    )));
                }
                if let Some(s) = &c.surrogate {
                    compile(&c.label, &s.expr)?;
                }
                compile(&c.label, &c.lhs)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cost = spec.cost.as_ref().map(|e| compile("cost", e)).transpose()?;
        let mask = |module: usize, subset: &[String]| -> Result<Vec<bool>, SpecError> {
            let m = &space.modules()[module];
            let mut mask = vec![false; m.len()];
            for s in subset {
                let j = m.component_position(s).ok_or_else(|| CatalogError::UnknownComponent {
                    module: m.module_id().to_string(),
                    component: s.clone(),
                })?;
                mask[j] = true;
            }
            Ok(mask)
        };
        let module = |id: &str| {
            space
                .module_position(id)
                .ok_or_else(|| CatalogError::UnknownModule(id.to_string()))
        };
        let compat = spec
            .compat_rules
            .iter()
            .map(|r| {
                let a = module(&r.a)?;
                let b = module(&r.b)?;
                if a == b {
                    return Err(SpecError::Invalid(format!(
                        "`{}` relates module `{}` to itself",
                        r.label, r.a
                    )));
                }
                let j = space.modules()[a].component_position(&r.component).ok_or_else(|| {
                    CatalogError::UnknownComponent {
                        module: r.a.clone(),
                        component: r.component.clone(),
                    }
                })?;
                Ok((a, j, b, mask(b, &r.subset)?))
            })
            .collect::<Result<Vec<_>, SpecError>>()?;
        let restrictions = spec
            .restrictions
            .iter()
            .map(|r| {
                let m = module(&r.module)?;
                if r.subset.is_empty() && !space.modules()[m].is_optional() {
                    return Err(SpecError::Invalid(format!(
                        "`{}` leaves required module `{}` without components",
                        r.label, r.module
                    )));
                }
                Ok((m, mask(m, &r.subset)?))
            })
            .collect::<Result<Vec<_>, SpecError>>()?;
        Ok(Self {
            spec,
            objectives,
            constraints,
            cost,
            compat,
            restrictions,
        })
    }

    pub fn spec(&self) -> &'a DesignSpec {
        self.spec
    }

    /// Exact check of every constraint, compatibility rule and restriction.
    ///
    /// Constraints that are undefined at `choices` (log of a nonpositive
    /// value, division by zero) are reported as errors, not as violations.
    pub fn check(&self, choices: &[Option<usize>]) -> Result<FeasibilityReport, SpecError> {
        let space = &self.spec.space;
        let mut checks = Vec::with_capacity(self.constraints.len() + self.compat.len() + self.restrictions.len());
        for (c, compiled) in self.spec.constraints.iter().zip(&self.constraints) {
            let lhs = compiled.eval(space, choices).map_err(|source| SpecError::Eval {
                label: c.label.clone(),
                source,
            })?;
            checks.push(ConstraintCheck::new(
                &c.label,
                CheckKind::Constraint(c.class),
                lhs,
                c.sense,
                c.rhs,
            ));
        }
        let picked = |m: usize, mask: &[bool]| choices[m].is_some_and(|j| mask[j]);
        for (rule, (a, j, b, mask)) in self.spec.compat_rules.iter().zip(&self.compat) {
            let xa = f64::from(u8::from(choices[*a] == Some(*j)));
            let xs = f64::from(u8::from(picked(*b, mask)));
            let (lhs, rhs) = match rule.polarity {
                Polarity::Compatible => (xa - xs, 0.0),
                Polarity::Incompatible => (xa + xs, 1.0),
            };
            checks.push(ConstraintCheck::new(
                &rule.label,
                CheckKind::Compat,
                lhs,
                Sense::Le,
                rhs,
            ));
        }
        for (r, (m, mask)) in self.spec.restrictions.iter().zip(&self.restrictions) {
            let outside = f64::from(u8::from(choices[*m].is_some() && !picked(*m, mask)));
            checks.push(ConstraintCheck::new(
                &r.label,
                CheckKind::Restriction,
                outside,
                Sense::Le,
                0.0,
            ));
        }
        Ok(FeasibilityReport { checks })
    }

    /// Exact objective values, one per lexicographic level.
    pub fn objectives(&self, choices: &[Option<usize>]) -> Result<Vec<f64>, SpecError> {
        self.spec
            .objectives
            .iter()
            .zip(&self.objectives)
            .map(|(o, c)| {
                c.eval(&self.spec.space, choices).map_err(|source| SpecError::Eval {
                    label: o.label.clone(),
                    source,
                })
            })
            .collect()
    }

    pub fn cost(&self, choices: &[Option<usize>]) -> Option<Result<f64, SpecError>> {
        self.cost.as_ref().map(|c| {
            c.eval(&self.spec.space, choices).map_err(|source| SpecError::Eval {
                label: "cost".into(),
                source,
            })
        })
    }
}

/// Exact feasibility of one design.
pub fn check_feasible(spec: &DesignSpec, x: &DesignVector) -> Result<FeasibilityReport, SpecError> {
    Evaluator::new(spec)?.check(&x.choices())
}

/// Lexicographic optimum by exhaustive enumeration.
///
/// Ties within tolerance at every level go to the design with the lowest
/// enumeration index (see [`crate::lex`]). Fails with
/// [`CatalogError::EnumerationCap`] when the space has more than `cap` designs.
pub fn brute_force_optimum(spec: &DesignSpec, cap: u128) -> Result<Solution, SpecError> {
    let start = Instant::now();
    let evaluator = Evaluator::new(spec)?;
    let space = &spec.space;
    let count = space.design_count();
    if count > cap {
        return Err(CatalogError::EnumerationCap { count, cap }.into());
    }
    let count = count as u64;
    let best = lex_argmax(count, spec.objectives.len(), |i| {
        let choices = space.design_at(u128::from(i));
        if !evaluator.check(&choices)?.is_feasible() {
            return Ok(None);
        }
        evaluator.objectives(&choices).map(Some)
    })?;
    let wall_time = start.elapsed().as_secs_f64();
    Ok(match best {
        None => Solution::infeasible(count, wall_time),
        Some((i, values)) => {
            let choices = space.design_at(u128::from(i));
            let report = evaluator.check(&choices)?;
            Solution {
                status: Status::Optimal,
                design: Some(DesignVector::from_choices(space, &choices)?),
                objective_values: values,
                node_count: count,
                wall_time,
                certificate: report.slacks(),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::FeatureMatrix;
    use crate::expr::feat;

    fn space() -> DesignSpace {
        let motor = FeatureMatrix::new(
            "motor",
            vec!["thrust".into(), "mass".into(), "cost".into()],
            vec![
                ("m1".into(), vec![4.0, 0.05, 20.0]),
                ("m2".into(), vec![6.0, 0.08, 35.0]),
                ("m3".into(), vec![8.0, 0.12, 60.0]),
            ],
        )
        .unwrap();
        let battery = FeatureMatrix::new(
            "battery",
            vec!["mass".into(), "cost".into()],
            vec![("b1".into(), vec![0.2, 30.0]), ("b2".into(), vec![0.4, 45.0])],
        )
        .unwrap();
        DesignSpace::new(vec![motor, battery]).unwrap()
    }

    #[test]
    fn thrust_to_weight_feasibility() {
        let spec = DesignSpec::new(space())
            .maximize(Objective::new("thrust", feat("motor", "thrust")))
            .subject_to(Constraint::parse("budget", "feat(motor, cost) + feat(battery, cost) <= 80").unwrap());
        let x = DesignVector::from_names(&spec.space, &[Some("m2"), Some("b2")]).unwrap();
        let report = check_feasible(&spec, &x).unwrap();
        assert!(report.is_feasible());
        assert!((report.checks[0].slack).abs() < 1e-12);
        let y = DesignVector::from_names(&spec.space, &[Some("m3"), Some("b1")]).unwrap();
        let report = check_feasible(&spec, &y).unwrap();
        assert_eq!(report.violated().count(), 1);
    }

    #[test]
    fn brute_force_picks_lexicographic_optimum() {
        // Max thrust under budget, then min total mass.
        let mass = feat("motor", "mass") + feat("battery", "mass");
        let spec = DesignSpec::new(space())
            .maximize(Objective::new("thrust", feat("motor", "thrust")))
            .maximize(Objective::new("lightness", -mass))
            .subject_to(Constraint::parse("budget", "feat(motor, cost) + feat(battery, cost) <= 80").unwrap());
        let sol = brute_force_optimum(&spec, 100).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert_eq!(sol.design.unwrap().choices(), vec![Some(1), Some(0)]);
        assert_eq!(sol.objective_values[0], 6.0);
        assert_eq!(sol.node_count, 6);
    }

    #[test]
    fn compat_and_restriction_rules() {
        let spec = DesignSpec::new(space())
            .maximize(Objective::new("thrust", feat("motor", "thrust")))
            .compat(CompatRule {
                label: "m3 needs b2".into(),
                a: "motor".into(),
                component: "m3".into(),
                b: "battery".into(),
                subset: vec!["b2".into()],
                polarity: Polarity::Compatible,
            })
            .restrict(Restriction {
                label: "small batteries".into(),
                module: "battery".into(),
                subset: vec!["b1".into()],
            });
        let sol = brute_force_optimum(&spec, 100).unwrap();
        assert_eq!(sol.design.unwrap().choices(), vec![Some(1), Some(0)]);
    }

    #[test]
    fn undefined_constraint_is_an_error() {
        let spec = DesignSpec::new(space()).subject_to(Constraint::le("bad", (feat("motor", "mass") - 0.1).log(), 0.0));
        let err = brute_force_optimum(&spec, 100).unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn infeasible_and_cap() {
        let spec = DesignSpec::new(space()).subject_to(Constraint::le("never", feat("motor", "thrust"), 1.0));
        assert_eq!(brute_force_optimum(&spec, 100).unwrap().status, Status::Infeasible);
        assert!(matches!(
            brute_force_optimum(&spec, 5),
            Err(SpecError::Catalog(CatalogError::EnumerationCap { count: 6, cap: 5 }))
        ));
    }

    #[test]
    fn unknown_names_fail_validation() {
        let spec = DesignSpec::new(space()).maximize(Objective::new("o", feat("motor", "rpm")));
        assert!(spec.validate().is_err());
        let spec = DesignSpec::new(space()).restrict(Restriction {
            label: "r".into(),
            module: "battery".into(),
            subset: vec!["b9".into()],
        });
        assert!(spec.validate().is_err());
    }
}
