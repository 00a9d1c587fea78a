//! Feature expressions over design vectors.
//!
//! [`FeatureExpr`] is the tree every objective and constraint is written in.
//! The lowering pipeline pattern-matches it, and the brute-force oracle
//! evaluates it exactly.

pub(crate) mod eval;
mod parse;
mod spec;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::catalog::FeatureMatrix;

pub use eval::{evaluate, evaluate_choices, CompiledExpr, EvalError};
pub use parse::{parse_constraint, parse_expr, ParseError, ParsedConstraint};
pub use spec::{
    brute_force_optimum, check_feasible, CheckKind, CompatRule, Constraint, ConstraintCheck, ConstraintClass,
    DesignSpec, Evaluator, FeasibilityReport, Objective, Polarity, Restriction, Sense, SpecError, Surrogate,
    SurrogateKind, FEAS_TOL,
};

/// Read-only view of one selected catalog column.
///
/// For an unselected optional module every feature reads as `0.0`.
#[derive(Clone, Copy)]
pub struct Column<'a> {
    matrix: &'a FeatureMatrix,
    component: Option<usize>,
}

impl<'a> Column<'a> {
    pub fn new(matrix: &'a FeatureMatrix, component: Option<usize>) -> Self {
        Self { matrix, component }
    }

    /// Feature value by name; `NaN` for a feature the module does not have.
    pub fn get(&self, feature: &str) -> f64 {
        match (self.matrix.feature_position(feature), self.component) {
            (Some(f), Some(j)) => self.matrix.value(f, j),
            (Some(_), None) => 0.0,
            (None, _) => f64::NAN,
        }
    }

    pub fn component(&self) -> Option<usize> {
        self.component
    }

    pub fn matrix(&self) -> &'a FeatureMatrix {
        self.matrix
    }
}

type UnaryFn = dyn Fn(&Column<'_>) -> f64 + Send + Sync;
type MultiFn = dyn Fn(&[Column<'_>]) -> f64 + Send + Sync;

/// A named scalar function of one module's selected column.
#[derive(Clone)]
pub struct ColumnFn {
    name: String,
    func: Arc<UnaryFn>,
}

impl ColumnFn {
    pub fn new(name: impl Into<String>, func: impl Fn(&Column<'_>) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn call(&self, column: &Column<'_>) -> f64 {
        (self.func)(column)
    }

    /// Product of the named features, e.g. current × voltage for power draw.
    pub fn product_of(features: &[&str]) -> Self {
        let owned: Vec<String> = features.iter().map(|s| s.to_string()).collect();
        Self::new(format!("product({})", owned.join(",")), move |c| {
            owned.iter().map(|f| c.get(f)).product()
        })
    }

    /// `feature ^ exponent`.
    pub fn power_of(feature: &str, exponent: f64) -> Self {
        let f = feature.to_string();
        Self::new(format!("{feature}^{exponent}"), move |c| c.get(&f).powf(exponent))
    }
}

impl fmt::Debug for ColumnFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ColumnFn({})", self.name)
    }
}

/// A named scalar function of several modules' selected columns.
#[derive(Clone)]
pub struct CrossFn {
    name: String,
    func: Arc<MultiFn>,
}

impl CrossFn {
    pub fn new(name: impl Into<String>, func: impl Fn(&[Column<'_>]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn call(&self, columns: &[Column<'_>]) -> f64 {
        (self.func)(columns)
    }
}

impl fmt::Debug for CrossFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CrossFn({})", self.name)
    }
}

#[derive(Debug, Clone)]
pub enum FeatureExpr {
    Constant(f64),
    /// `weight · [F_module]_feature · x_module`.
    Feature {
        module: String,
        feature: String,
        weight: f64,
    },
    /// `weight · Σ_{j ∈ components} [x_module]_j`.
    Selector {
        module: String,
        components: Vec<String>,
        weight: f64,
    },
    Sum(Vec<FeatureExpr>),
    Product(Vec<FeatureExpr>),
    Quotient(Box<FeatureExpr>, Box<FeatureExpr>),
    Power(Box<FeatureExpr>, f64),
    Log(Box<FeatureExpr>),
    UnaryPerModule {
        module: String,
        func: ColumnFn,
    },
    CrossTerm {
        modules: Vec<String>,
        func: CrossFn,
    },
}

/// Shorthand for `[F_module]_feature · x_module`.
pub fn feat(module: &str, feature: &str) -> FeatureExpr {
    FeatureExpr::Feature {
        module: module.to_string(),
        feature: feature.to_string(),
        weight: 1.0,
    }
}

/// Shorthand for `Σ_{j ∈ components} [x_module]_j`.
pub fn sel<S: AsRef<str>>(module: &str, components: &[S]) -> FeatureExpr {
    FeatureExpr::Selector {
        module: module.to_string(),
        components: components.iter().map(|s| s.as_ref().to_string()).collect(),
        weight: 1.0,
    }
}

pub fn constant(value: f64) -> FeatureExpr {
    FeatureExpr::Constant(value)
}

pub fn unary(module: &str, func: ColumnFn) -> FeatureExpr {
    FeatureExpr::UnaryPerModule {
        module: module.to_string(),
        func,
    }
}

pub fn cross(modules: &[&str], func: CrossFn) -> FeatureExpr {
    FeatureExpr::CrossTerm {
        modules: modules.iter().map(|s| s.to_string()).collect(),
        func,
    }
}

impl FeatureExpr {
    pub fn log(self) -> Self {
        FeatureExpr::Log(Box::new(self))
    }

    pub fn powf(self, exponent: f64) -> Self {
        FeatureExpr::Power(Box::new(self), exponent)
    }

    pub fn sqrt(self) -> Self {
        self.powf(0.5)
    }

    /// Multiplies a feature/selector leaf's weight in place of wrapping it in a product.
    pub fn scaled(self, factor: f64) -> Self {
        match self {
            FeatureExpr::Feature {
                module,
                feature,
                weight,
            } => FeatureExpr::Feature {
                module,
                feature,
                weight: weight * factor,
            },
            FeatureExpr::Selector {
                module,
                components,
                weight,
            } => FeatureExpr::Selector {
                module,
                components,
                weight: weight * factor,
            },
            FeatureExpr::Constant(c) => FeatureExpr::Constant(c * factor),
            FeatureExpr::Product(mut fs) => {
                match fs.first_mut() {
                    Some(FeatureExpr::Constant(c)) => *c *= factor,
                    _ => fs.insert(0, FeatureExpr::Constant(factor)),
                }
                FeatureExpr::Product(fs)
            }
            other => FeatureExpr::Product(vec![FeatureExpr::Constant(factor), other]),
        }
    }

    /// Sum of an iterator of expressions (`0` when empty).
    pub fn sum(terms: impl IntoIterator<Item = FeatureExpr>) -> Self {
        let terms: Vec<_> = terms.into_iter().collect();
        if terms.is_empty() {
            FeatureExpr::Constant(0.0)
        } else {
            terms.into_iter().fold(FeatureExpr::Sum(vec![]), |acc, t| acc + t)
        }
    }

    /// Modules referenced anywhere in the tree, sorted by name.
    pub fn modules(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_modules(&mut out);
        out
    }

    fn collect_modules<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            FeatureExpr::Constant(_) => {}
            FeatureExpr::Feature { module, .. }
            | FeatureExpr::Selector { module, .. }
            | FeatureExpr::UnaryPerModule { module, .. } => {
                out.insert(module);
            }
            FeatureExpr::Sum(ts) | FeatureExpr::Product(ts) => ts.iter().for_each(|t| t.collect_modules(out)),
            FeatureExpr::Quotient(a, b) => {
                a.collect_modules(out);
                b.collect_modules(out);
            }
            FeatureExpr::Power(b, _) | FeatureExpr::Log(b) => b.collect_modules(out),
            FeatureExpr::CrossTerm { modules, .. } => out.extend(modules.iter().map(String::as_str)),
        }
    }

    /// Value of a module-free subtree.
    pub fn constant_value(&self) -> Option<f64> {
        if !self.modules().is_empty() {
            return None;
        }
        eval::evaluate_constant(self).ok()
    }

    /// True when the tree contains a closure-backed node, which has no textual form.
    pub fn has_opaque_nodes(&self) -> bool {
        match self {
            FeatureExpr::UnaryPerModule { .. } | FeatureExpr::CrossTerm { .. } => true,
            FeatureExpr::Sum(ts) | FeatureExpr::Product(ts) => ts.iter().any(Self::has_opaque_nodes),
            FeatureExpr::Quotient(a, b) => a.has_opaque_nodes() || b.has_opaque_nodes(),
            FeatureExpr::Power(b, _) | FeatureExpr::Log(b) => b.has_opaque_nodes(),
            _ => false,
        }
    }
}

impl Add for FeatureExpr {
    type Output = FeatureExpr;
    fn add(self, rhs: FeatureExpr) -> FeatureExpr {
        let mut terms = match self {
            FeatureExpr::Sum(ts) => ts,
            other => vec![other],
        };
        match rhs {
            FeatureExpr::Sum(ts) => terms.extend(ts),
            other => terms.push(other),
        }
        FeatureExpr::Sum(terms)
    }
}

impl Add<f64> for FeatureExpr {
    type Output = FeatureExpr;
    fn add(self, rhs: f64) -> FeatureExpr {
        self + FeatureExpr::Constant(rhs)
    }
}

impl Sub for FeatureExpr {
    type Output = FeatureExpr;
    fn sub(self, rhs: FeatureExpr) -> FeatureExpr {
        self + (-rhs)
    }
}

impl Sub<f64> for FeatureExpr {
    type Output = FeatureExpr;
    fn sub(self, rhs: f64) -> FeatureExpr {
        self + FeatureExpr::Constant(-rhs)
    }
}

impl Neg for FeatureExpr {
    type Output = FeatureExpr;
    fn neg(self) -> FeatureExpr {
        match self {
            FeatureExpr::Sum(ts) => FeatureExpr::Sum(ts.into_iter().map(|t| -t).collect()),
            other => other.scaled(-1.0),
        }
    }
}

impl Mul for FeatureExpr {
    type Output = FeatureExpr;
    fn mul(self, rhs: FeatureExpr) -> FeatureExpr {
        let mut factors = match self {
            FeatureExpr::Product(fs) => fs,
            other => vec![other],
        };
        match rhs {
            FeatureExpr::Product(fs) => factors.extend(fs),
            other => factors.push(other),
        }
        FeatureExpr::Product(factors)
    }
}

impl Mul<FeatureExpr> for f64 {
    type Output = FeatureExpr;
    fn mul(self, rhs: FeatureExpr) -> FeatureExpr {
        rhs.scaled(self)
    }
}

impl Mul<f64> for FeatureExpr {
    type Output = FeatureExpr;
    fn mul(self, rhs: f64) -> FeatureExpr {
        self.scaled(rhs)
    }
}

impl Div for FeatureExpr {
    type Output = FeatureExpr;
    fn div(self, rhs: FeatureExpr) -> FeatureExpr {
        FeatureExpr::Quotient(Box::new(self), Box::new(rhs))
    }
}

impl Div<f64> for FeatureExpr {
    type Output = FeatureExpr;
    fn div(self, rhs: f64) -> FeatureExpr {
        self.scaled(1.0 / rhs)
    }
}

fn needs_quotes(name: &str) -> bool {
    let mut chars = name.chars();
    !matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        || !chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

pub(crate) fn write_name(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    if needs_quotes(name) {
        write!(f, "\"{}\"", name.replace('"', "\\\""))
    } else {
        f.write_str(name)
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v < 0.0 {
        write!(f, "(-{})", -v)
    } else {
        write!(f, "{v}")
    }
}

/// Infix rendering in the problem-file expression syntax.
///
/// Closure-backed nodes render as `name[module]`, which does not parse back.
impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureExpr::Constant(c) => write_number(f, *c),
            FeatureExpr::Feature {
                module,
                feature,
                weight,
            } => {
                if *weight != 1.0 {
                    write_number(f, *weight)?;
                    f.write_str("*")?;
                }
                f.write_str("feat(")?;
                write_name(f, module)?;
                f.write_str(", ")?;
                write_name(f, feature)?;
                f.write_str(")")
            }
            FeatureExpr::Selector {
                module,
                components,
                weight,
            } => {
                if *weight != 1.0 {
                    write_number(f, *weight)?;
                    f.write_str("*")?;
                }
                f.write_str("sel(")?;
                write_name(f, module)?;
                f.write_str(", {")?;
                for (i, c) in components.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_name(f, c)?;
                }
                f.write_str("})")
            }
            FeatureExpr::Sum(ts) => {
                if ts.is_empty() {
                    return f.write_str("0");
                }
                f.write_str("(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
            FeatureExpr::Product(ts) => {
                if ts.is_empty() {
                    return f.write_str("1");
                }
                f.write_str("(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" * ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
            FeatureExpr::Quotient(a, b) => write!(f, "({a} / {b})"),
            FeatureExpr::Power(b, p) => {
                write!(f, "({b})^")?;
                write_number(f, *p)
            }
            FeatureExpr::Log(a) => write!(f, "log({a})"),
            FeatureExpr::UnaryPerModule { module, func } => write!(f, "{}[{}]", func.name(), module),
            FeatureExpr::CrossTerm { modules, func } => write!(f, "{}[{}]", func.name(), modules.join(",")),
        }
    }
}
