//! Linear forms over a design space and the term analysis behind the
//! lowering cases.

use std::collections::BTreeMap;

use crate::catalog::DesignSpace;
use crate::expr::{CompiledExpr, EvalError, FeatureExpr};

use super::Transform;

/// A linear function of the design vector plus joint-choice cells.
///
/// `modules[i][j]` multiplies `[x_i]_j`; `lifted[set][cell]` multiplies the
/// joint-choice cell of the module set (sorted module indices, cell index
/// mixed radix with the first module most significant).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub modules: Vec<Vec<f64>>,
    pub lifted: BTreeMap<Vec<usize>, Vec<f64>>,
    pub constant: f64,
}

impl LinearForm {
    pub fn zero(space: &DesignSpace) -> Self {
        Self {
            modules: space.modules().iter().map(|m| vec![0.0; m.len()]).collect(),
            lifted: BTreeMap::new(),
            constant: 0.0,
        }
    }

    /// Value at a selection; lifted cells are read from the parents' choices.
    pub fn eval(&self, space: &DesignSpace, choices: &[Option<usize>]) -> f64 {
        let mut v = 0.0;
        for (coefs, c) in self.modules.iter().zip(choices) {
            if let Some(j) = c {
                v += coefs[*j];
            }
        }
        for (set, cells) in &self.lifted {
            if let Some(cell) = cell_index(space, set, choices) {
                v += cells[cell];
            }
        }
        v + self.constant
    }

    pub fn negate(&mut self) {
        self.modules.iter_mut().flatten().for_each(|c| *c = -*c);
        self.lifted.values_mut().flatten().for_each(|c| *c = -*c);
        self.constant = -self.constant;
    }

    pub fn is_constant(&self) -> bool {
        self.lifted.is_empty() && self.modules.iter().flatten().all(|&c| c == 0.0)
    }
}

/// Joint-choice cell of `set` under `choices`, if every module in it is chosen.
pub fn cell_index(space: &DesignSpace, set: &[usize], choices: &[Option<usize>]) -> Option<usize> {
    set.iter()
        .try_fold(0, |acc, &m| choices[m].map(|j| acc * space.modules()[m].len() + j))
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TermError {
    Eval(EvalError),
    Domain {
        module: String,
        component: String,
        message: String,
    },
    NeedsLift(Vec<String>),
    LiftCap {
        modules: Vec<String>,
        cells: u128,
        cap: u128,
    },
    OptionalLift(String),
}

impl From<EvalError> for TermError {
    fn from(e: EvalError) -> Self {
        TermError::Eval(e)
    }
}

struct Term<'a> {
    scale: f64,
    factors: Vec<&'a FeatureExpr>,
}

/// Splits `expr` into `constant + Σ scale·Π factors`.
fn additive_terms<'a>(
    expr: &'a FeatureExpr,
    scale: f64,
    terms: &mut Vec<Term<'a>>,
    constant: &mut f64,
) -> Result<(), EvalError> {
    if let Some(c) = module_free(expr)? {
        *constant += scale * c;
        return Ok(());
    }
    match expr {
        FeatureExpr::Sum(ts) => {
            for t in ts {
                additive_terms(t, scale, terms, constant)?;
            }
        }
        FeatureExpr::Product(fs) => {
            let mut k = 1.0;
            let mut rest = Vec::new();
            for f in fs {
                match module_free(f)? {
                    Some(c) => k *= c,
                    None => rest.push(f),
                }
            }
            if rest.len() == 1 {
                additive_terms(rest[0], scale * k, terms, constant)?;
            } else {
                terms.push(Term {
                    scale: scale * k,
                    factors: rest,
                });
            }
        }
        FeatureExpr::Quotient(a, b) if b.modules().is_empty() => {
            let d = crate::expr::eval::evaluate_constant(b)?;
            if d == 0.0 {
                return Err(EvalError::Domain("division by zero".into()));
            }
            additive_terms(a, scale / d, terms, constant)?;
        }
        _ => terms.push(Term {
            scale,
            factors: vec![expr],
        }),
    }
    Ok(())
}

fn module_free(expr: &FeatureExpr) -> Result<Option<f64>, EvalError> {
    if expr.modules().is_empty() {
        crate::expr::eval::evaluate_constant(expr).map(Some)
    } else {
        Ok(None)
    }
}

fn module_indices(space: &DesignSpace, expr: &FeatureExpr) -> Vec<usize> {
    let mut out: Vec<usize> = expr.modules().iter().filter_map(|m| space.module_position(m)).collect();
    out.sort_unstable();
    out
}

struct CompiledTerm {
    scale: f64,
    factors: Vec<CompiledExpr>,
}

impl CompiledTerm {
    fn new(space: &DesignSpace, term: &Term<'_>) -> Result<Self, EvalError> {
        Ok(Self {
            scale: term.scale,
            factors: term
                .factors
                .iter()
                .map(|f| CompiledExpr::compile(space, f))
                .collect::<Result<_, _>>()?,
        })
    }

    fn eval(&self, space: &DesignSpace, choices: &[Option<usize>]) -> Result<f64, EvalError> {
        let mut v = self.scale;
        for f in &self.factors {
            v *= f.eval(space, choices)?;
        }
        Ok(v)
    }
}

fn domain(space: &DesignSpace, module: usize, component: Option<usize>, message: String) -> TermError {
    let m = &space.modules()[module];
    TermError::Domain {
        module: m.module_id().to_string(),
        component: component.map_or_else(|| "none".to_string(), |j| m.component_names()[j].clone()),
        message,
    }
}

/// Lowers a sum of linear, single-module and (if `lift_cap` is set) multi-module terms.
///
/// Returns the form and the strongest case used: linear passthrough,
/// columnwise, log-rational (a `log` of a product spanning modules, expanded
/// exactly) or lifted.
pub(crate) fn lower_terms(
    space: &DesignSpace,
    expr: &FeatureExpr,
    lift_cap: Option<u128>,
) -> Result<(LinearForm, Transform), TermError> {
    let mut terms = Vec::new();
    let mut form = LinearForm::zero(space);
    additive_terms(expr, 1.0, &mut terms, &mut form.constant)?;
    let mut rank = 0;
    for term in &terms {
        if let [leaf @ (FeatureExpr::Feature { .. } | FeatureExpr::Selector { .. })] = term.factors.as_slice() {
            add_linear_leaf(space, leaf, term.scale, &mut form)?;
            continue;
        }
        let mut mods: Vec<usize> = term.factors.iter().flat_map(|f| module_indices(space, f)).collect();
        mods.sort_unstable();
        mods.dedup();
        if mods.len() == 1 {
            add_columnwise(space, mods[0], &CompiledTerm::new(space, term)?, &mut form)?;
            rank = rank.max(1);
            continue;
        }
        if let [FeatureExpr::Log(arg)] = term.factors.as_slice() {
            if let Some(r) = Rational::of(arg) {
                add_log_expansion(space, &r, term.scale, &mut form)?;
                rank = rank.max(2);
                continue;
            }
        }
        let names = || {
            mods.iter()
                .map(|&m| space.modules()[m].module_id().to_string())
                .collect()
        };
        let Some(cap) = lift_cap else {
            return Err(TermError::NeedsLift(names()));
        };
        if let Some(&m) = mods.iter().find(|&&m| space.modules()[m].is_optional()) {
            return Err(TermError::OptionalLift(space.modules()[m].module_id().to_string()));
        }
        let cells = mods
            .iter()
            .fold(1u128, |acc, &m| acc.saturating_mul(space.modules()[m].len() as u128));
        if cells > cap {
            return Err(TermError::LiftCap {
                modules: names(),
                cells,
                cap,
            });
        }
        add_lifted(space, &mods, &CompiledTerm::new(space, term)?, &mut form)?;
        rank = 3;
    }
    let transform = [
        Transform::LinearPassthrough,
        Transform::Columnwise,
        Transform::LogRational,
        Transform::Lifted,
    ][rank];
    Ok((form, transform))
}

fn add_linear_leaf(
    space: &DesignSpace,
    leaf: &FeatureExpr,
    scale: f64,
    form: &mut LinearForm,
) -> Result<(), EvalError> {
    match leaf {
        FeatureExpr::Feature {
            module,
            feature,
            weight,
        } => {
            let m = space.module_position(module).expect("validated module");
            let row = space.feature_row(module, feature)?;
            for (c, v) in form.modules[m].iter_mut().zip(row) {
                *c += scale * weight * v;
            }
        }
        FeatureExpr::Selector {
            module,
            components,
            weight,
        } => {
            let m = space.module_position(module).expect("validated module");
            let matrix = &space.modules()[m];
            let mut mask = vec![false; matrix.len()];
            for name in components {
                let j =
                    matrix
                        .component_position(name)
                        .ok_or_else(|| crate::catalog::CatalogError::UnknownComponent {
                            module: module.clone(),
                            component: name.clone(),
                        })?;
                mask[j] = true;
            }
            for (c, on) in form.modules[m].iter_mut().zip(mask) {
                if on {
                    *c += scale * weight;
                }
            }
        }
        _ => unreachable!("not a linear leaf"),
    }
    Ok(())
}

fn single_choice(space: &DesignSpace, module: usize, component: Option<usize>) -> Vec<Option<usize>> {
    let mut choices = vec![None; space.modules().len()];
    choices[module] = component;
    choices
}

fn add_columnwise(space: &DesignSpace, m: usize, term: &CompiledTerm, form: &mut LinearForm) -> Result<(), TermError> {
    let eval_at = |j: Option<usize>| {
        term.eval(space, &single_choice(space, m, j))
            .map_err(|e| domain(space, m, j, e.to_string()))
    };
    let base = if space.modules()[m].is_optional() {
        eval_at(None)?
    } else {
        0.0
    };
    for j in 0..space.modules()[m].len() {
        form.modules[m][j] += eval_at(Some(j))? - base;
    }
    form.constant += base;
    Ok(())
}

fn add_lifted(
    space: &DesignSpace,
    mods: &[usize],
    term: &CompiledTerm,
    form: &mut LinearForm,
) -> Result<(), TermError> {
    let lens: Vec<usize> = mods.iter().map(|&m| space.modules()[m].len()).collect();
    let cells: usize = lens.iter().product();
    let entry = form.lifted.entry(mods.to_vec()).or_insert_with(|| vec![0.0; cells]);
    let mut choices = vec![None; space.modules().len()];
    for (cell, slot) in entry.iter_mut().enumerate() {
        let mut rest = cell;
        for (k, &m) in mods.iter().enumerate().rev() {
            choices[m] = Some(rest % lens[k]);
            rest /= lens[k];
        }
        *slot += term.eval(space, &choices).map_err(|e| {
            let at: Vec<String> = mods
                .iter()
                .map(|&m| {
                    let mm = &space.modules()[m];
                    format!("{}={}", mm.module_id(), mm.component_names()[choices[m].unwrap_or(0)])
                })
                .collect();
            TermError::Domain {
                module: at.join(","),
                component: String::new(),
                message: e.to_string(),
            }
        })?;
    }
    Ok(())
}

/// `coef · Π factor^exponent` where every factor depends on a single module.
#[derive(Debug, Clone)]
pub(crate) struct Rational {
    pub coef: f64,
    pub factors: Vec<(f64, FeatureExpr)>,
}

impl Rational {
    /// Recognizes the product/quotient/power shape; `None` for anything else.
    pub fn of(expr: &FeatureExpr) -> Option<Self> {
        let mut r = Rational {
            coef: 1.0,
            factors: Vec::new(),
        };
        r.collect(expr, 1.0).then_some(r)
    }

    fn collect(&mut self, expr: &FeatureExpr, exponent: f64) -> bool {
        if expr.modules().is_empty() {
            return match crate::expr::eval::evaluate_constant(expr)
                .and_then(|c| crate::expr::eval::checked_pow(c, exponent))
            {
                Ok(v) => {
                    self.coef *= v;
                    true
                }
                Err(_) => false,
            };
        }
        match expr {
            FeatureExpr::Feature {
                module,
                feature,
                weight,
            } if *weight != 1.0 => {
                match crate::expr::eval::checked_pow(*weight, exponent) {
                    Ok(v) => self.coef *= v,
                    Err(_) => return false,
                }
                self.factors.push((exponent, crate::expr::feat(module, feature)));
                true
            }
            FeatureExpr::Product(fs) => fs.iter().all(|f| self.collect(f, exponent)),
            FeatureExpr::Quotient(a, b) => self.collect(a, exponent) && self.collect(b, -exponent),
            FeatureExpr::Power(b, p) => self.collect(b, exponent * p),
            e if e.modules().len() == 1 => {
                self.factors.push((exponent, e.clone()));
                true
            }
            _ => false,
        }
    }

    /// Per-module `Σ exponent·log factor(column)` plus `log |coef|`.
    ///
    /// Fails when a factor is nonpositive on some column (including the empty
    /// choice of an optional module).
    pub fn log_form(&self, space: &DesignSpace) -> Result<LinearForm, TermError> {
        let mut form = LinearForm::zero(space);
        if self.coef == 0.0 {
            return Err(TermError::Eval(EvalError::Domain("log of a zero coefficient".into())));
        }
        form.constant = self.coef.abs().ln();
        for (e, f) in &self.factors {
            let m = module_indices(space, f)[0];
            let compiled = CompiledExpr::compile(space, f)?;
            let matrix = &space.modules()[m];
            let options: Vec<Option<usize>> = (0..matrix.len())
                .map(Some)
                .chain(matrix.is_optional().then_some(None))
                .collect();
            for j in options {
                let v = compiled
                    .eval(space, &single_choice(space, m, j))
                    .map_err(|err| domain(space, m, j, err.to_string()))?;
                if v <= 0.0 {
                    return Err(domain(space, m, j, format!("log of nonpositive value {v} in `{f}`")));
                }
                if let Some(j) = j {
                    form.modules[m][j] += e * v.ln();
                }
            }
        }
        Ok(form)
    }
}

fn add_log_expansion(space: &DesignSpace, r: &Rational, scale: f64, form: &mut LinearForm) -> Result<(), TermError> {
    if r.coef <= 0.0 {
        return Err(TermError::Eval(EvalError::Domain(format!(
            "log of a product with nonpositive coefficient {}",
            r.coef
        ))));
    }
    let log = r.log_form(space)?;
    for (dst, src) in form.modules.iter_mut().zip(&log.modules) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += scale * s;
        }
    }
    form.constant += scale * log.constant;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::FeatureMatrix;
    use crate::expr::{evaluate_choices, feat, parse_expr};

    fn space() -> DesignSpace {
        let a = FeatureMatrix::new(
            "a",
            vec!["v".into(), "w".into()],
            vec![
                ("a1".into(), vec![1.0, 2.0]),
                ("a2".into(), vec![2.0, 3.0]),
                ("a3".into(), vec![3.0, 0.5]),
            ],
        )
        .unwrap();
        let b = FeatureMatrix::new(
            "b",
            vec!["v".into()],
            vec![("b1".into(), vec![3.0]), ("b2".into(), vec![4.0])],
        )
        .unwrap();
        let c = FeatureMatrix::new(
            "c",
            vec!["v".into()],
            vec![("c1".into(), vec![5.0]), ("c2".into(), vec![7.0])],
        )
        .unwrap()
        .with_optional(true);
        DesignSpace::new(vec![a, b, c]).unwrap()
    }

    fn check_identity(space: &DesignSpace, src: &str, transform: Transform) {
        let e = parse_expr(src).unwrap();
        let (form, t) = lower_terms(space, &e, Some(1000)).unwrap();
        assert_eq!(t, transform, "{src}");
        for i in 0..space.design_count() {
            let ch = space.design_at(i);
            let want = evaluate_choices(space, &e, &ch).unwrap();
            let got = form.eval(space, &ch);
            assert!(
                (want - got).abs() <= 1e-12 * want.abs().max(1.0),
                "{src} at {ch:?}: {want} vs {got}"
            );
        }
    }

    #[test]
    fn linear_columnwise_and_lifted_forms_match_evaluation() {
        let s = space();
        check_identity(
            &s,
            "2*feat(a, v) - 3*feat(b, v) + feat(c, v) + 7",
            Transform::LinearPassthrough,
        );
        check_identity(
            &s,
            "feat(a, v)^2 + feat(b, v)*feat(b, v) + log(feat(a, w))",
            Transform::Columnwise,
        );
        check_identity(&s, "feat(a, v)*feat(b, v) + feat(c, v)", Transform::Lifted);
        check_identity(&s, "log(feat(a, v)*feat(b, v)^2/3)", Transform::LogRational);
    }

    #[test]
    fn square_on_torque_row() {
        let s = space();
        let (form, _) = lower_terms(&s, &feat("a", "v").powf(2.0), None).unwrap();
        assert_eq!(form.modules[0], vec![1.0, 4.0, 9.0]);
    }

    #[test]
    fn lifted_cells_for_product() {
        let a = FeatureMatrix::new(
            "a",
            vec!["v".into()],
            vec![("a1".into(), vec![1.0]), ("a2".into(), vec![2.0])],
        )
        .unwrap();
        let b = FeatureMatrix::new(
            "b",
            vec!["v".into()],
            vec![("b1".into(), vec![3.0]), ("b2".into(), vec![4.0])],
        )
        .unwrap();
        let s = DesignSpace::new(vec![a, b]).unwrap();
        let (form, t) = lower_terms(&s, &(feat("a", "v") * feat("b", "v")), Some(100)).unwrap();
        assert_eq!(t, Transform::Lifted);
        assert_eq!(form.lifted[&vec![0, 1]], vec![3.0, 4.0, 6.0, 8.0]);
        assert!(matches!(
            lower_terms(&s, &(feat("a", "v") * feat("b", "v")), Some(3)),
            Err(TermError::LiftCap { cells: 4, cap: 3, .. })
        ));
        assert!(matches!(
            lower_terms(&s, &(feat("a", "v") * feat("b", "v")), None),
            Err(TermError::NeedsLift(_))
        ));
    }

    #[test]
    fn optional_modules_refuse_lifting_and_shift_columnwise_offsets() {
        let s = space();
        let e = parse_expr("feat(a, v)*feat(c, v)").unwrap();
        assert_eq!(lower_terms(&s, &e, Some(100)), Err(TermError::OptionalLift("c".into())));
        let (form, _) = lower_terms(&s, &(feat("c", "v") + 1.0).powf(2.0), None).unwrap();
        assert_eq!(form.constant, 1.0);
        assert_eq!(form.modules[2], vec![35.0, 63.0]);
    }

    #[test]
    fn rational_recognition() {
        let r = Rational::of(&parse_expr("2*feat(a, v)*feat(b, v)^0.5/(3*feat(a, w))").unwrap()).unwrap();
        assert!((r.coef - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.factors.len(), 3);
        assert!(Rational::of(&parse_expr("feat(a, v) + feat(b, v)").unwrap()).is_none());
        assert!(Rational::of(&parse_expr("feat(a, v)/(feat(a, w) + feat(b, v))").unwrap()).is_none());
        let s = space();
        let e = parse_expr("feat(a, v)*feat(b, v)").unwrap();
        let log = Rational::of(&e).unwrap().log_form(&s).unwrap();
        assert_eq!(log.modules[0], vec![0.0, 2f64.ln(), 3f64.ln()]);
        let bad = Rational::of(&parse_expr("(feat(a, v) - 2)*feat(b, v)").unwrap()).unwrap();
        assert!(matches!(bad.log_form(&s), Err(TermError::Domain { .. })));
    }
}
