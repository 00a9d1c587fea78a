use serde::Serialize;

use crate::expr::Sense;

/// How a row or objective was produced from the source problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    LinearPassthrough,
    Columnwise,
    LogRational,
    Lifted,
    SurrogateLowerBound,
    SurrogateUpperBound,
    OneHot,
    Compat,
    Restriction,
    Linking,
    Pin,
}

impl Transform {
    pub fn as_str(&self) -> &'static str {
        match self {
            Transform::LinearPassthrough => "linear-passthrough",
            Transform::Columnwise => "columnwise",
            Transform::LogRational => "log-rational",
            Transform::Lifted => "lifted",
            Transform::SurrogateLowerBound => "surrogate-lower-bound",
            Transform::SurrogateUpperBound => "surrogate-upper-bound",
            Transform::OneHot => "one-hot",
            Transform::Compat => "compat",
            Transform::Restriction => "restriction",
            Transform::Linking => "linking",
            Transform::Pin => "pin",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Transform::LinearPassthrough,
            Transform::Columnwise,
            Transform::LogRational,
            Transform::Lifted,
            Transform::SurrogateLowerBound,
            Transform::SurrogateUpperBound,
            Transform::OneHot,
            Transform::Compat,
            Transform::Restriction,
            Transform::Linking,
            Transform::Pin,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BlockKind {
    /// One catalog module (or any exactly-one / at-most-one group).
    Module,
    /// Joint choice of the listed parent blocks; cell index is mixed radix
    /// over the parents' components, first parent most significant.
    Lifted { parents: Vec<usize> },
}

/// A contiguous group of variables of which at most one (`optional`) or
/// exactly one is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Block {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub optional: bool,
    pub kind: BlockKind,
}

impl Block {
    pub fn vars(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }

    pub fn is_lifted(&self) -> bool {
        matches!(self.kind, BlockKind::Lifted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum VarOrigin {
    Component {
        module: String,
        component: String,
    },
    Cell {
        modules: Vec<String>,
        components: Vec<String>,
    },
    Imported,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variable {
    pub name: String,
    pub block: usize,
    pub origin: VarOrigin,
}

/// `Σ coef·x  (<= | =)  rhs` with sparse, variable-sorted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub name: String,
    /// Label of the source constraint, module or lifted block.
    pub source: String,
    pub transform: Transform,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    pub fn activity(&self, x: &[bool]) -> f64 {
        self.terms.iter().filter(|(v, _)| x[*v]).map(|(_, c)| c).sum()
    }

    /// Absolute feasibility tolerance of this row.
    pub fn tolerance(&self) -> f64 {
        let scale = self
            .terms
            .iter()
            .fold(self.rhs.abs().max(1.0), |m, (_, c)| m.max(c.abs()));
        crate::expr::FEAS_TOL * scale
    }

    /// `rhs - activity` for `<=`, `-|activity - rhs|` for `=`.
    pub fn slack(&self, x: &[bool]) -> f64 {
        let a = self.activity(x);
        match self.sense {
            Sense::Le => self.rhs - a,
            Sense::Eq => -(a - self.rhs).abs(),
        }
    }

    pub fn satisfied(&self, x: &[bool]) -> bool {
        self.slack(x) >= -self.tolerance()
    }
}

/// One lexicographic level: maximize `Σ coef·x + offset`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectiveRow {
    pub label: String,
    pub transform: Transform,
    pub terms: Vec<(usize, f64)>,
    pub offset: f64,
}

impl ObjectiveRow {
    pub fn value(&self, x: &[bool]) -> f64 {
        self.terms.iter().filter(|(v, _)| x[*v]).map(|(_, c)| c).sum::<f64>() + self.offset
    }
}

/// A binary linear program whose variables are partitioned into blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlpInstance {
    pub variables: Vec<Variable>,
    pub blocks: Vec<Block>,
    /// Maximized lexicographically in order.
    pub objectives: Vec<ObjectiveRow>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("malformed instance: {0}")]
pub struct MalformedInstance(pub String);

impl BlpInstance {
    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    /// Blocks that are chosen directly (everything except lifted blocks).
    pub fn branch_blocks(&self) -> impl Iterator<Item = (usize, &Block)> {
        self.blocks.iter().enumerate().filter(|(_, b)| !b.is_lifted())
    }

    pub fn lifted_blocks(&self) -> impl Iterator<Item = (usize, &Block)> {
        self.blocks.iter().enumerate().filter(|(_, b)| b.is_lifted())
    }

    /// Checks the structural invariants the solver relies on.
    pub fn validate(&self) -> Result<(), MalformedInstance> {
        let bad = |m: String| Err(MalformedInstance(m));
        let mut next = 0;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.start != next || b.len == 0 {
                return bad(format!("block `{}` is not contiguous or is empty", b.name));
            }
            next += b.len;
            if let BlockKind::Lifted { parents } = &b.kind {
                if parents.len() < 2 || parents.iter().any(|&p| p >= i || self.blocks[p].is_lifted()) {
                    return bad(format!("lifted block `{}` has invalid parents", b.name));
                }
                let cells: usize = parents.iter().map(|&p| self.blocks[p].len).product();
                if cells != b.len || b.optional || parents.iter().any(|&p| self.blocks[p].optional) {
                    return bad(format!("lifted block `{}` does not match its parents", b.name));
                }
            }
            if b.vars().any(|v| self.variables.get(v).map(|x| x.block) != Some(i)) {
                return bad(format!("block `{}` disagrees with its variables", b.name));
            }
        }
        if next != self.variables.len() {
            return bad("variables outside every block".into());
        }
        let n = self.variables.len();
        let check_terms = |what: &str, terms: &[(usize, f64)]| {
            if terms.windows(2).any(|w| w[0].0 >= w[1].0) || terms.iter().any(|(v, c)| *v >= n || !c.is_finite()) {
                return bad(format!(
                    "`{what}` has unsorted, out-of-range or non-finite coefficients"
                ));
            }
            Ok(())
        };
        for r in &self.rows {
            check_terms(&r.name, &r.terms)?;
            if !r.rhs.is_finite() {
                return bad(format!("row `{}` has a non-finite right-hand side", r.name));
            }
        }
        for o in &self.objectives {
            check_terms(&o.label, &o.terms)?;
            if !o.offset.is_finite() {
                return bad(format!("objective `{}` has a non-finite offset", o.label));
            }
        }
        Ok(())
    }

    /// Assignment for per-block choices of the branch blocks (in block order,
    /// `None` for an empty optional block). Lifted cells are derived.
    pub fn assignment(&self, choices: &[Option<usize>]) -> Vec<bool> {
        let mut x = vec![false; self.num_vars()];
        let mut full: Vec<Option<usize>> = vec![None; self.blocks.len()];
        for ((i, b), c) in self.branch_blocks().zip(choices) {
            full[i] = *c;
            if let Some(j) = c {
                x[b.start + j] = true;
            }
        }
        for (_, b) in self.lifted_blocks() {
            if let Some(cell) = self.cell_of(b, &full) {
                x[b.start + cell] = true;
            }
        }
        x
    }

    /// Cell selected in lifted block `b` by the parents' choices.
    pub fn cell_of(&self, b: &Block, choices: &[Option<usize>]) -> Option<usize> {
        let BlockKind::Lifted { parents } = &b.kind else {
            return None;
        };
        parents
            .iter()
            .try_fold(0, |acc, &p| choices[p].map(|j| acc * self.blocks[p].len + j))
    }

    /// Per-block choices read back from an assignment (`None` when the block is empty).
    pub fn block_choices(&self, x: &[bool]) -> Vec<Option<usize>> {
        self.blocks.iter().map(|b| b.vars().position(|v| x[v])).collect()
    }

    pub fn objective_values(&self, x: &[bool]) -> Vec<f64> {
        self.objectives.iter().map(|o| o.value(x)).collect()
    }

    /// True when every block holds at most one (exactly one if required) set
    /// variable and every row is satisfied within its tolerance.
    pub fn is_feasible(&self, x: &[bool]) -> bool {
        self.blocks.iter().all(|b| {
            let set = b.vars().filter(|&v| x[v]).count();
            set == 1 || (set == 0 && b.optional)
        }) && self.rows.iter().all(|r| r.satisfied(x))
    }

    /// Option counts of the branch blocks (`len + 1` for optional ones).
    pub fn option_counts(&self) -> Vec<usize> {
        self.branch_blocks()
            .map(|(_, b)| b.len + usize::from(b.optional))
            .collect()
    }

    /// Number of branch-block combinations.
    pub fn design_count(&self) -> u128 {
        self.option_counts()
            .iter()
            .fold(1u128, |acc, &n| acc.saturating_mul(n as u128))
    }

    /// Branch-block choices at enumeration `index` (first block most significant,
    /// the empty option of an optional block last).
    pub fn design_at(&self, mut index: u128) -> Vec<Option<usize>> {
        let lens: Vec<(usize, bool)> = self.branch_blocks().map(|(_, b)| (b.len, b.optional)).collect();
        let mut out = vec![None; lens.len()];
        for (i, &(len, optional)) in lens.iter().enumerate().rev() {
            let n = (len + usize::from(optional)) as u128;
            let d = (index % n) as usize;
            index /= n;
            out[i] = (d < len).then_some(d);
        }
        out
    }
}

impl BlpInstance {
    /// Instance with plain module blocks of the given `(len, optional)` shapes
    /// and no rows or objectives. Variables are named `x<block>_<option>`.
    pub fn with_blocks(shapes: &[(usize, bool)]) -> Self {
        let mut inst = Self {
            variables: Vec::new(),
            blocks: Vec::new(),
            objectives: Vec::new(),
            rows: Vec::new(),
        };
        for (b, &(len, optional)) in shapes.iter().enumerate() {
            let start = inst.variables.len();
            for j in 0..len {
                inst.variables.push(Variable {
                    name: format!("x{b}_{j}"),
                    block: b,
                    origin: VarOrigin::Imported,
                });
            }
            inst.blocks.push(Block {
                name: format!("b{b}"),
                start,
                len,
                optional,
                kind: BlockKind::Module,
            });
        }
        inst
    }

    fn sparse(dense: &[f64]) -> Vec<(usize, f64)> {
        dense.iter().copied().enumerate().filter(|(_, c)| *c != 0.0).collect()
    }

    /// Appends an objective level from dense coefficients over all variables.
    pub fn push_objective(&mut self, label: &str, dense: &[f64], offset: f64) {
        self.objectives.push(ObjectiveRow {
            label: label.to_string(),
            transform: Transform::LinearPassthrough,
            terms: Self::sparse(dense),
            offset,
        });
    }

    /// Appends a row from dense coefficients over all variables.
    pub fn push_row(&mut self, name: &str, dense: &[f64], sense: Sense, rhs: f64) {
        self.rows.push(Row {
            name: name.to_string(),
            source: name.to_string(),
            transform: Transform::LinearPassthrough,
            terms: Self::sparse(dense),
            sense,
            rhs,
        });
    }
}
