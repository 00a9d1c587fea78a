//! Lowering of a [`DesignSpec`] to a binary linear program.
//!
//! Each objective and constraint is rewritten by the first case that applies:
//!
//! * linear passthrough: sums of feature and selector terms;
//! * columnwise: any term depending on a single module is precomputed on every
//!   catalog column, so `f(F x) = f(F)·x` for one-hot `x`;
//! * log-rational: a product/quotient of positive single-module factors is
//!   replaced by its logarithm, which is linear after the columnwise step and
//!   preserves the argmax (and the feasible set of a `<=` row);
//! * registered surrogates: conservative replacements carried by the problem;
//! * lifting: a term coupling several modules gets one binary per joint
//!   choice, tied to the module blocks by marginal linking rows.

mod instance;
mod lp_format;
mod terms;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::catalog::DesignSpace;
use crate::expr::{
    CompatRule, Constraint, DesignSpec, EvalError, Evaluator, FeatureExpr, Objective, Polarity, Restriction, Sense,
    SpecError,
};

pub use instance::{
    Block, BlockKind, BlpInstance, MalformedInstance, ObjectiveRow, Row, Transform, VarOrigin, Variable,
};
pub use lp_format::{provenance_json, read_lp, write_lp, LpError};
pub use terms::{cell_index, LinearForm};

use terms::{lower_terms, Rational, TermError};

/// Largest joint-choice block the lowering creates by default.
pub const DEFAULT_LIFT_CAP: u128 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerOptions {
    pub lift_cap: u128,
    /// Use the surrogates attached to objectives and constraints when the
    /// exact expression needs lifting.
    pub use_surrogates: bool,
}

impl Default for LowerOptions {
    fn default() -> Self {
        Self {
            lift_cap: DEFAULT_LIFT_CAP,
            use_surrogates: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exactness {
    /// The lowered problem has the same optimal designs (and, for rows, the
    /// same feasible set) as the source.
    ExactArgmaxPreserving,
    /// Every design feasible for the lowered row is feasible for the source;
    /// a lowered objective never exceeds the source objective.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryRole {
    Objective,
    Constraint,
    Compat,
    Restriction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub label: String,
    pub role: EntryRole,
    pub transform: Transform,
    pub exactness: Exactness,
    /// Names of the rows emitted for this entry (empty for objectives).
    pub rows: Vec<String>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoweringReport {
    pub entries: Vec<ReportEntry>,
    pub variables: usize,
    pub lifted_variables: usize,
    pub rows: usize,
}

impl LoweringReport {
    pub fn is_exact(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.exactness == Exactness::ExactArgmaxPreserving)
    }
}

#[derive(Debug, Error)]
pub enum LowerError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("`{label}` cannot be lowered: {reason}")]
    Unlowerable { label: String, reason: String },
    #[error("`{label}`: {message} (module {module}, component {component})")]
    Domain {
        label: String,
        module: String,
        component: String,
        message: String,
    },
    #[error(
        "`{label}` couples modules {modules:?}: lifting needs {cells} cells, above the cap of {cap}; \
         attach a surrogate or raise the cap"
    )]
    LiftCap {
        label: String,
        modules: Vec<String>,
        cells: u128,
        cap: u128,
    },
    #[error("`{label}` couples optional module `{module}` with other modules; lifting supports required modules only")]
    OptionalLift { label: String, module: String },
    #[error("`{label}`: {source}")]
    Eval {
        label: String,
        #[source]
        source: EvalError,
    },
}

impl LowerError {
    fn from_term(label: &str, e: TermError) -> Self {
        let label = label.to_string();
        match e {
            TermError::Eval(source) => LowerError::Eval { label, source },
            TermError::Domain {
                module,
                component,
                message,
            } => LowerError::Domain {
                label,
                module,
                component,
                message,
            },
            TermError::NeedsLift(modules) => LowerError::Unlowerable {
                label,
                reason: format!("a term couples modules {modules:?} and lifting is disabled"),
            },
            TermError::LiftCap { modules, cells, cap } => LowerError::LiftCap {
                label,
                modules,
                cells,
                cap,
            },
            TermError::OptionalLift(module) => LowerError::OptionalLift { label, module },
        }
    }
}

/// Case (a): fails unless `expr` is a sum of feature, selector and constant terms.
pub fn lower_linear(space: &DesignSpace, expr: &FeatureExpr) -> Result<LinearForm, LowerError> {
    match lower_terms(space, expr, None) {
        Ok((form, Transform::LinearPassthrough)) => Ok(form),
        Ok(_) | Err(TermError::NeedsLift(_)) => Err(LowerError::Unlowerable {
            label: expr.to_string(),
            reason: "not linear in the design vector".into(),
        }),
        Err(e) => Err(LowerError::from_term(&expr.to_string(), e)),
    }
}

/// Cases (a) and (b): every term depends on at most one module.
pub fn lower_columnwise(space: &DesignSpace, expr: &FeatureExpr) -> Result<LinearForm, LowerError> {
    lower_terms(space, expr, None)
        .map(|(f, _)| f)
        .map_err(|e| LowerError::from_term(&expr.to_string(), e))
}

/// Case (c): the logarithm of `|expr|` for a product/quotient of positive
/// single-module factors, as a linear form.
pub fn lower_log_rational(space: &DesignSpace, expr: &FeatureExpr) -> Result<LinearForm, LowerError> {
    let r = Rational::of(expr).ok_or_else(|| LowerError::Unlowerable {
        label: expr.to_string(),
        reason: "not a product or quotient of single-module factors".into(),
    })?;
    r.log_form(space)
        .map_err(|e| LowerError::from_term(&expr.to_string(), e))
}

/// Case (d): any expression, with multi-module terms lifted (cap on the cells per block).
pub fn lift_cross_term(space: &DesignSpace, expr: &FeatureExpr, cap: u128) -> Result<LinearForm, LowerError> {
    lower_terms(space, expr, Some(cap))
        .map(|(f, _)| f)
        .map_err(|e| LowerError::from_term(&expr.to_string(), e))
}

/// Lowers with [`LowerOptions::default`].
pub fn lower(spec: &DesignSpec) -> Result<(BlpInstance, LoweringReport), LowerError> {
    lower_with(spec, &LowerOptions::default())
}

pub fn lower_with(spec: &DesignSpec, options: &LowerOptions) -> Result<(BlpInstance, LoweringReport), LowerError> {
    Evaluator::new(spec)?;
    let mut b = Builder::new(&spec.space);
    let mut entries = Vec::new();
    let mut objectives = Vec::new();
    for o in &spec.objectives {
        let (form, transform, exactness, note) = lower_objective(&spec.space, o, options)?;
        let terms = b.terms_of(&form);
        objectives.push(ObjectiveRow {
            label: o.label.clone(),
            transform,
            terms,
            offset: form.constant,
        });
        entries.push(ReportEntry {
            label: o.label.clone(),
            role: EntryRole::Objective,
            transform,
            exactness,
            rows: Vec::new(),
            note,
        });
    }
    for c in &spec.constraints {
        entries.push(lower_constraint(&mut b, c, options)?);
    }
    for rule in &spec.compat_rules {
        entries.push(lower_compat(&mut b, rule));
    }
    for r in &spec.restrictions {
        entries.push(lower_restriction(&mut b, r));
    }
    let instance = b.finish(objectives);
    let report = LoweringReport {
        entries,
        variables: instance.num_vars(),
        lifted_variables: instance.lifted_blocks().map(|(_, b)| b.len).sum(),
        rows: instance.rows.len(),
    };
    debug_assert!(instance.validate().is_ok());
    Ok((instance, report))
}

type Lowered = (LinearForm, Transform, Exactness, Option<String>);

fn lower_objective(space: &DesignSpace, o: &Objective, options: &LowerOptions) -> Result<Lowered, LowerError> {
    let exact = Exactness::ExactArgmaxPreserving;
    match lower_terms(space, &o.expr, None) {
        Ok((form, t)) => return Ok((form, t, exact, None)),
        Err(TermError::NeedsLift(_)) => {}
        Err(e) => return Err(LowerError::from_term(&o.label, e)),
    }
    if let Some(mut form) = log_objective(space, &o.label, &o.expr)? {
        let note = "maximizes the logarithm of the objective".to_string();
        if form.1 {
            form.0.negate();
        }
        return Ok((form.0, Transform::LogRational, exact, Some(note)));
    }
    if let (Some(s), true) = (&o.surrogate, options.use_surrogates) {
        let note = format!("{} surrogate", s.kind.as_str());
        let form = match lower_terms(space, &s.expr, None) {
            Ok((form, _)) => form,
            Err(TermError::NeedsLift(_)) => match log_objective(space, &o.label, &s.expr)? {
                Some((mut form, negate)) => {
                    if negate {
                        form.negate();
                    }
                    form
                }
                None => {
                    return Err(LowerError::Unlowerable {
                        label: o.label.clone(),
                        reason: "the surrogate couples modules".into(),
                    })
                }
            },
            Err(e) => return Err(LowerError::from_term(&o.label, e)),
        };
        return Ok((
            form,
            Transform::SurrogateLowerBound,
            Exactness::Conservative,
            Some(note),
        ));
    }
    let (form, t) =
        lower_terms(space, &o.expr, Some(options.lift_cap)).map_err(|e| LowerError::from_term(&o.label, e))?;
    Ok((form, t, exact, None))
}

/// Log form of a rational objective; the flag is set when the coefficient is
/// negative (maximize `-log`).
fn log_objective(
    space: &DesignSpace,
    label: &str,
    expr: &FeatureExpr,
) -> Result<Option<(LinearForm, bool)>, LowerError> {
    let Some(r) = Rational::of(expr) else {
        return Ok(None);
    };
    let form = r.log_form(space).map_err(|e| LowerError::from_term(label, e))?;
    Ok(Some((form, r.coef < 0.0)))
}

struct LoweredRow {
    form: LinearForm,
    sense: Sense,
    rhs: f64,
    note: Option<String>,
}

/// Case (c) for a row `coef·P (<= | =) rhs`; the result is in log space.
fn log_row(space: &DesignSpace, label: &str, r: &Rational, sense: Sense, rhs: f64) -> Result<LoweredRow, LowerError> {
    let mut form = r.log_form(space).map_err(|e| LowerError::from_term(label, e))?;
    form.constant = 0.0;
    let bound = rhs / r.coef;
    let never = |note: &str| LoweredRow {
        form: LinearForm::zero(space),
        sense: Sense::Le,
        rhs: -1.0,
        note: Some(note.to_string()),
    };
    Ok(match (sense, r.coef > 0.0) {
        (Sense::Eq, _) if bound > 0.0 => LoweredRow {
            form,
            sense: Sense::Eq,
            rhs: bound.ln(),
            note: None,
        },
        (Sense::Eq, _) => never("a positive product cannot equal a nonpositive value"),
        (Sense::Le, true) if bound > 0.0 => LoweredRow {
            form,
            sense: Sense::Le,
            rhs: bound.ln(),
            note: None,
        },
        (Sense::Le, true) => never("a positive product cannot be bounded by a nonpositive value"),
        (Sense::Le, false) if bound > 0.0 => {
            form.negate();
            LoweredRow {
                form,
                sense: Sense::Le,
                rhs: -bound.ln(),
                note: None,
            }
        }
        (Sense::Le, false) => LoweredRow {
            form: LinearForm::zero(space),
            sense: Sense::Le,
            rhs: 0.0,
            note: Some("always satisfied".into()),
        },
    })
}

fn lower_constraint(b: &mut Builder<'_>, c: &Constraint, options: &LowerOptions) -> Result<ReportEntry, LowerError> {
    let space = b.space;
    let exact = Exactness::ExactArgmaxPreserving;
    let plain = |form: LinearForm, sense, rhs| LoweredRow {
        form,
        sense,
        rhs,
        note: None,
    };
    let (lowered, transform, exactness) = match lower_terms(space, &c.lhs, None) {
        Ok((form, t)) => (plain(form, c.sense, c.rhs), t, exact),
        Err(TermError::NeedsLift(_)) => {
            if let Some(r) = Rational::of(&c.lhs) {
                (
                    log_row(space, &c.label, &r, c.sense, c.rhs)?,
                    Transform::LogRational,
                    exact,
                )
            } else if let (Some(s), true) = (&c.surrogate, options.use_surrogates) {
                let lowered = match lower_terms(space, &s.expr, None) {
                    Ok((form, _)) => plain(form, Sense::Le, s.rhs),
                    Err(TermError::NeedsLift(_)) => match Rational::of(&s.expr) {
                        Some(r) => log_row(space, &c.label, &r, Sense::Le, s.rhs)?,
                        None => {
                            return Err(LowerError::Unlowerable {
                                label: c.label.clone(),
                                reason: "the surrogate couples modules".into(),
                            })
                        }
                    },
                    Err(e) => return Err(LowerError::from_term(&c.label, e)),
                };
                let note = Some(format!("{} surrogate", s.kind.as_str()));
                (
                    LoweredRow { note, ..lowered },
                    Transform::SurrogateUpperBound,
                    Exactness::Conservative,
                )
            } else {
                let (form, t) = lower_terms(space, &c.lhs, Some(options.lift_cap))
                    .map_err(|e| LowerError::from_term(&c.label, e))?;
                (plain(form, c.sense, c.rhs), t, exact)
            }
        }
        Err(e) => return Err(LowerError::from_term(&c.label, e)),
    };
    let terms = b.terms_of(&lowered.form);
    let name = b.push_row(
        &c.label,
        transform,
        terms,
        lowered.sense,
        lowered.rhs - lowered.form.constant,
    );
    Ok(ReportEntry {
        label: c.label.clone(),
        role: EntryRole::Constraint,
        transform,
        exactness,
        rows: vec![name],
        note: lowered.note,
    })
}

fn lower_compat(b: &mut Builder<'_>, rule: &CompatRule) -> ReportEntry {
    let space = b.space;
    let a = space.module_position(&rule.a).expect("validated module");
    let m_b = space.module_position(&rule.b).expect("validated module");
    let j = space.modules()[a]
        .component_position(&rule.component)
        .expect("validated component");
    let (sign, rhs) = match rule.polarity {
        Polarity::Compatible => (-1.0, 0.0),
        Polarity::Incompatible => (1.0, 1.0),
    };
    let mut terms = vec![(space.offset(a) + j, 1.0)];
    for s in &rule.subset {
        let k = space.modules()[m_b].component_position(s).expect("validated component");
        terms.push((space.offset(m_b) + k, sign));
    }
    terms.sort_by_key(|t| t.0);
    terms.dedup_by_key(|t| t.0);
    let note = (rule.subset.is_empty() && rule.polarity == Polarity::Compatible)
        .then(|| format!("empty compatible subset: `{}` can never be selected", rule.component));
    let name = b.push_row(&rule.label, Transform::Compat, terms, Sense::Le, rhs);
    ReportEntry {
        label: rule.label.clone(),
        role: EntryRole::Compat,
        transform: Transform::Compat,
        exactness: Exactness::ExactArgmaxPreserving,
        rows: vec![name],
        note,
    }
}

fn lower_restriction(b: &mut Builder<'_>, r: &Restriction) -> ReportEntry {
    let space = b.space;
    let m = space.module_position(&r.module).expect("validated module");
    let matrix = &space.modules()[m];
    let mut inside = vec![false; matrix.len()];
    for s in &r.subset {
        inside[matrix.component_position(s).expect("validated component")] = true;
    }
    let mut entry = ReportEntry {
        label: r.label.clone(),
        role: EntryRole::Restriction,
        transform: Transform::Restriction,
        exactness: Exactness::ExactArgmaxPreserving,
        rows: Vec::new(),
        note: None,
    };
    if inside.iter().all(|&x| x) {
        entry.note = Some("duplicates the one-hot row".into());
        return entry;
    }
    let pick = |want: bool| -> Vec<(usize, f64)> {
        (0..matrix.len())
            .filter(|&j| inside[j] == want)
            .map(|j| (space.offset(m) + j, 1.0))
            .collect()
    };
    let name = if matrix.is_optional() {
        b.push_row(&r.label, Transform::Restriction, pick(false), Sense::Le, 0.0)
    } else {
        b.push_row(&r.label, Transform::Restriction, pick(true), Sense::Eq, 1.0)
    };
    entry.rows.push(name);
    entry
}

/// Replaces characters outside `[A-Za-z0-9_]` so the name is a valid LP identifier.
pub(crate) fn lp_identifier(raw: &str) -> String {
    let mut s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic()) {
        s.insert_str(0, "r_");
    }
    s
}

struct Builder<'a> {
    space: &'a DesignSpace,
    variables: Vec<Variable>,
    blocks: Vec<Block>,
    lifted: BTreeMap<Vec<usize>, usize>,
    rows: Vec<Row>,
    names: std::collections::HashSet<String>,
}

impl<'a> Builder<'a> {
    fn new(space: &'a DesignSpace) -> Self {
        let mut b = Self {
            space,
            variables: Vec::new(),
            blocks: Vec::new(),
            lifted: BTreeMap::new(),
            rows: Vec::new(),
            names: Default::default(),
        };
        for (i, m) in space.modules().iter().enumerate() {
            let start = b.variables.len();
            for c in m.component_names() {
                let name = b.unique(&format!("x_{}_{}", m.module_id(), c));
                b.variables.push(Variable {
                    name,
                    block: i,
                    origin: VarOrigin::Component {
                        module: m.module_id().to_string(),
                        component: c.clone(),
                    },
                });
            }
            b.blocks.push(Block {
                name: m.module_id().to_string(),
                start,
                len: m.len(),
                optional: m.is_optional(),
                kind: BlockKind::Module,
            });
            let sense = if m.is_optional() { Sense::Le } else { Sense::Eq };
            let terms = (start..start + m.len()).map(|v| (v, 1.0)).collect();
            b.push_row(&format!("sos_{}", m.module_id()), Transform::OneHot, terms, sense, 1.0);
            b.rows.last_mut().expect("row just pushed").source = m.module_id().to_string();
        }
        b
    }

    fn unique(&mut self, raw: &str) -> String {
        let base = lp_identifier(raw);
        let mut name = base.clone();
        let mut k = 2;
        while !self.names.insert(name.clone()) {
            name = format!("{base}_{k}");
            k += 1;
        }
        name
    }

    fn push_row(
        &mut self,
        source: &str,
        transform: Transform,
        terms: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> String {
        let name = self.unique(source);
        self.rows.push(Row {
            name: name.clone(),
            source: source.to_string(),
            transform,
            terms,
            sense,
            rhs,
        });
        name
    }

    fn lifted_block(&mut self, set: &[usize]) -> usize {
        if let Some(&b) = self.lifted.get(set) {
            return b;
        }
        let space = self.space;
        let ids: Vec<String> = set
            .iter()
            .map(|&m| space.modules()[m].module_id().to_string())
            .collect();
        let lens: Vec<usize> = set.iter().map(|&m| space.modules()[m].len()).collect();
        let cells: usize = lens.iter().product();
        let index = self.blocks.len();
        let start = self.variables.len();
        for cell in 0..cells {
            let mut rest = cell;
            let mut coords = vec![0; set.len()];
            for k in (0..set.len()).rev() {
                coords[k] = rest % lens[k];
                rest /= lens[k];
            }
            let components: Vec<String> = set
                .iter()
                .zip(&coords)
                .map(|(&m, &j)| space.modules()[m].component_names()[j].clone())
                .collect();
            let name = self.unique(&format!("z_{}_{}", ids.join("_"), components.join("_")));
            self.variables.push(Variable {
                name,
                block: index,
                origin: VarOrigin::Cell {
                    modules: ids.clone(),
                    components,
                },
            });
        }
        self.blocks.push(Block {
            name: format!("z_{}", ids.join("_")),
            start,
            len: cells,
            optional: false,
            kind: BlockKind::Lifted { parents: set.to_vec() },
        });
        self.lifted.insert(set.to_vec(), index);
        index
    }

    fn terms_of(&mut self, form: &LinearForm) -> Vec<(usize, f64)> {
        let mut terms = Vec::new();
        for (m, coefs) in form.modules.iter().enumerate() {
            let off = self.space.offset(m);
            terms.extend(
                coefs
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(j, c)| (off + j, *c)),
            );
        }
        for (set, cells) in &form.lifted {
            let block = self.lifted_block(set);
            let start = self.blocks[block].start;
            terms.extend(
                cells
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| **c != 0.0)
                    .map(|(j, c)| (start + j, *c)),
            );
        }
        terms.sort_by_key(|t| t.0);
        terms
    }

    /// Appends the one-hot and linking rows of every lifted block.
    fn finish(mut self, objectives: Vec<ObjectiveRow>) -> BlpInstance {
        let lifted: Vec<usize> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_lifted())
            .map(|(i, _)| i)
            .collect();
        for bi in lifted {
            let block = self.blocks[bi].clone();
            let BlockKind::Lifted { parents } = &block.kind else {
                unreachable!()
            };
            let lens: Vec<usize> = parents.iter().map(|&p| self.blocks[p].len).collect();
            let terms = block.vars().map(|v| (v, 1.0)).collect();
            self.push_row(&format!("sos_{}", block.name), Transform::OneHot, terms, Sense::Eq, 1.0);
            self.rows.last_mut().expect("row just pushed").source = block.name.clone();
            for (k, &p) in parents.iter().enumerate() {
                let inner: usize = lens[k + 1..].iter().product();
                for j in 0..lens[k] {
                    let mut terms: Vec<(usize, f64)> = (0..block.len)
                        .filter(|cell| (cell / inner) % lens[k] == j)
                        .map(|cell| (block.start + cell, 1.0))
                        .collect();
                    terms.push((self.blocks[p].start + j, -1.0));
                    terms.sort_by_key(|t| t.0);
                    let label = format!("link_{}_{}_{}", block.name, self.blocks[p].name, j);
                    self.push_row(&label, Transform::Linking, terms, Sense::Eq, 0.0);
                    self.rows.last_mut().expect("row just pushed").source = block.name.clone();
                }
            }
        }
        BlpInstance {
            variables: self.variables,
            blocks: self.blocks,
            objectives,
            rows: self.rows,
        }
    }
}
