use thiserror::Error;

use super::{Column, ColumnFn, CrossFn, FeatureExpr};
use crate::catalog::{CatalogError, DesignSpace, DesignVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Reference(#[from] CatalogError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("required module `{0}` has no selected component")]
    Unselected(String),
}

/// An expression with module/feature names resolved against one space.
#[derive(Debug, Clone)]
pub struct CompiledExpr {
    root: Node,
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Feat {
        module: usize,
        feature: usize,
        weight: f64,
    },
    Sel {
        module: usize,
        mask: Vec<bool>,
        weight: f64,
    },
    Sum(Vec<Node>),
    Product(Vec<Node>),
    Quot(Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
    Log(Box<Node>),
    Unary {
        module: usize,
        func: ColumnFn,
    },
    Cross {
        modules: Vec<usize>,
        func: CrossFn,
    },
}

impl CompiledExpr {
    /// Resolves every reference, failing on unknown modules, features or components.
    pub fn compile(space: &DesignSpace, expr: &FeatureExpr) -> Result<Self, EvalError> {
        Ok(Self {
            root: compile(space, expr)?,
        })
    }

    /// Exact value at the selection `choices` (one entry per module).
    pub fn eval(&self, space: &DesignSpace, choices: &[Option<usize>]) -> Result<f64, EvalError> {
        let v = eval(&self.root, space, choices)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::Domain(format!("non-finite result {v}")))
        }
    }
}

fn compile(space: &DesignSpace, expr: &FeatureExpr) -> Result<Node, EvalError> {
    let module_of = |m: &str| {
        space
            .module_position(m)
            .ok_or_else(|| EvalError::Reference(CatalogError::UnknownModule(m.to_string())))
    };
    Ok(match expr {
        FeatureExpr::Constant(c) => Node::Const(*c),
        FeatureExpr::Feature {
            module,
            feature,
            weight,
        } => {
            let m = module_of(module)?;
            let f = space.modules()[m]
                .feature_position(feature)
                .ok_or_else(|| CatalogError::UnknownFeature {
                    module: module.clone(),
                    feature: feature.clone(),
                })?;
            Node::Feat {
                module: m,
                feature: f,
                weight: *weight,
            }
        }
        FeatureExpr::Selector {
            module,
            components,
            weight,
        } => {
            let m = module_of(module)?;
            let matrix = &space.modules()[m];
            let mut mask = vec![false; matrix.len()];
            for c in components {
                let j = matrix
                    .component_position(c)
                    .ok_or_else(|| CatalogError::UnknownComponent {
                        module: module.clone(),
                        component: c.clone(),
                    })?;
                mask[j] = true;
            }
            Node::Sel {
                module: m,
                mask,
                weight: *weight,
            }
        }
        FeatureExpr::Sum(ts) => Node::Sum(ts.iter().map(|t| compile(space, t)).collect::<Result<_, _>>()?),
        FeatureExpr::Product(ts) => Node::Product(ts.iter().map(|t| compile(space, t)).collect::<Result<_, _>>()?),
        FeatureExpr::Quotient(a, b) => {
            if matches!(**b, FeatureExpr::Constant(c) if c == 0.0) {
                return Err(EvalError::Domain("quotient by the constant zero".into()));
            }
            Node::Quot(Box::new(compile(space, a)?), Box::new(compile(space, b)?))
        }
        FeatureExpr::Power(b, p) => Node::Pow(Box::new(compile(space, b)?), *p),
        FeatureExpr::Log(a) => Node::Log(Box::new(compile(space, a)?)),
        FeatureExpr::UnaryPerModule { module, func } => Node::Unary {
            module: module_of(module)?,
            func: func.clone(),
        },
        FeatureExpr::CrossTerm { modules, func } => {
            let idx = modules.iter().map(|m| module_of(m)).collect::<Result<Vec<_>, _>>()?;
            let mut dedup = idx.clone();
            dedup.sort_unstable();
            dedup.dedup();
            if dedup.len() < 2 || dedup.len() != idx.len() {
                return Err(EvalError::Domain(format!(
                    "cross term `{}` must list at least two distinct modules",
                    func.name()
                )));
            }
            Node::Cross {
                modules: idx,
                func: func.clone(),
            }
        }
    })
}

fn choice(space: &DesignSpace, choices: &[Option<usize>], module: usize) -> Result<Option<usize>, EvalError> {
    match choices[module] {
        Some(j) => Ok(Some(j)),
        None if space.modules()[module].is_optional() => Ok(None),
        None => Err(EvalError::Unselected(space.modules()[module].module_id().to_string())),
    }
}

/// `base ^ exponent` with the domain rules of the expression language.
pub(crate) fn checked_pow(base: f64, exponent: f64) -> Result<f64, EvalError> {
    let integral = exponent.fract() == 0.0;
    if !integral && base <= 0.0 {
        return Err(EvalError::Domain(format!(
            "fractional power {exponent} of nonpositive {base}"
        )));
    }
    if base == 0.0 && exponent < 0.0 {
        return Err(EvalError::Domain(format!("negative power {exponent} of zero")));
    }
    Ok(if integral && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    })
}

pub(crate) fn checked_log(arg: f64) -> Result<f64, EvalError> {
    if arg <= 0.0 || arg.is_nan() {
        Err(EvalError::Domain(format!("log of nonpositive {arg}")))
    } else {
        Ok(arg.ln())
    }
}

fn eval(node: &Node, space: &DesignSpace, choices: &[Option<usize>]) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Feat {
            module,
            feature,
            weight,
        } => match choice(space, choices, *module)? {
            Some(j) => weight * space.modules()[*module].value(*feature, j),
            None => 0.0,
        },
        Node::Sel { module, mask, weight } => match choice(space, choices, *module)? {
            Some(j) if mask[j] => *weight,
            _ => 0.0,
        },
        Node::Sum(ts) => {
            let mut acc = 0.0;
            for t in ts {
                acc += eval(t, space, choices)?;
            }
            acc
        }
        Node::Product(ts) => {
            let mut acc = 1.0;
            for t in ts {
                acc *= eval(t, space, choices)?;
            }
            acc
        }
        Node::Quot(a, b) => {
            let den = eval(b, space, choices)?;
            if den == 0.0 {
                return Err(EvalError::Domain("division by zero".into()));
            }
            eval(a, space, choices)? / den
        }
        Node::Pow(b, p) => checked_pow(eval(b, space, choices)?, *p)?,
        Node::Log(a) => checked_log(eval(a, space, choices)?)?,
        Node::Unary { module, func } => {
            let col = Column::new(&space.modules()[*module], choice(space, choices, *module)?);
            let v = func.call(&col);
            if !v.is_finite() {
                return Err(EvalError::Domain(format!(
                    "function `{}` undefined on module `{}` component {:?}",
                    func.name(),
                    space.modules()[*module].module_id(),
                    col.component()
                )));
            }
            v
        }
        Node::Cross { modules, func } => {
            let cols = modules
                .iter()
                .map(|m| Ok(Column::new(&space.modules()[*m], choice(space, choices, *m)?)))
                .collect::<Result<Vec<_>, EvalError>>()?;
            let v = func.call(&cols);
            if !v.is_finite() {
                return Err(EvalError::Domain(format!(
                    "function `{}` undefined at this selection",
                    func.name()
                )));
            }
            v
        }
    })
}

/// Evaluates a module-free expression.
pub(crate) fn evaluate_constant(expr: &FeatureExpr) -> Result<f64, EvalError> {
    let empty = DesignSpace::new(vec![]).expect("empty space");
    CompiledExpr::compile(&empty, expr)?.eval(&empty, &[])
}

/// Exact value of `expr` at design `x`.
pub fn evaluate(space: &DesignSpace, expr: &FeatureExpr, x: &DesignVector) -> Result<f64, EvalError> {
    evaluate_choices(space, expr, &x.choices())
}

pub fn evaluate_choices(space: &DesignSpace, expr: &FeatureExpr, choices: &[Option<usize>]) -> Result<f64, EvalError> {
    CompiledExpr::compile(space, expr)?.eval(space, choices)
}
