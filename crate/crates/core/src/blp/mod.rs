//! Branch-and-bound solver for block-structured binary linear programs.
//!
//! The search branches on whole blocks (which component a module takes),
//! propagates row activity bounds between blocks and prunes with two upper
//! bounds on the objective: the separable block maximum and a Lagrangian
//! bound whose multipliers come from a subgradient pass at the root.
//! Objectives are optimized lexicographically by pinning each level before
//! moving to the next; a final in-order pass returns the lowest-index design
//! among the lexicographic optima.

mod model;
mod search;

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::lex::{lex_argmax, LEX_TOL};
use crate::lower::{BlpInstance, MalformedInstance};
use crate::solution::{Slack, Status};
use model::{Dom, Model};
use search::{Cut, Incumbent, Mode, Search, Shared};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branching {
    /// Block with the fewest surviving options first, best coefficient first.
    #[default]
    MostConstrained,
    /// Blocks in order, options in index order.
    InOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub time_limit: Option<Duration>,
    pub node_limit: Option<u64>,
    pub gap_tolerance: f64,
    pub branching: Branching,
    /// Single-threaded search with reproducible output.
    pub deterministic: bool,
    pub subgradient_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            time_limit: None,
            node_limit: None,
            gap_tolerance: 1e-9,
            branching: Branching::MostConstrained,
            deterministic: true,
            subgradient_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BlpError {
    #[error(transparent)]
    Malformed(#[from] MalformedInstance),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("enumeration of {count} designs exceeds the cap of {cap}")]
    EnumerationCap { count: u128, cap: u64 },
    #[error("objective level {level} out of range ({levels} levels)")]
    Level { level: usize, levels: usize },
}

/// Result of [`solve`] on an instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlpSolution {
    pub status: Status,
    /// Option per branch block (`None` for an empty optional block).
    pub choices: Option<Vec<Option<usize>>>,
    /// Full 0-1 assignment, lifted cells included.
    pub assignment: Option<Vec<bool>>,
    pub objective_values: Vec<f64>,
    pub node_count: u64,
    pub wall_time: f64,
    /// Slack of every row at the assignment.
    pub certificate: Vec<Slack>,
}

impl BlpSolution {
    fn new(inst: &BlpInstance, status: Status, found: Option<Incumbent>, nodes: u64, start: Instant) -> Self {
        let wall_time = start.elapsed().as_secs_f64();
        match found {
            Some(inc) => Self {
                status,
                objective_values: inst.objective_values(&inc.x),
                certificate: inst
                    .rows
                    .iter()
                    .map(|r| Slack {
                        label: r.name.clone(),
                        slack: r.slack(&inc.x),
                    })
                    .collect(),
                choices: Some(inc.choices),
                assignment: Some(inc.x),
                node_count: nodes,
                wall_time,
            },
            None => Self {
                status,
                choices: None,
                assignment: None,
                objective_values: Vec::new(),
                node_count: nodes,
                wall_time,
                certificate: Vec::new(),
            },
        }
    }
}

/// Surviving options per block. Option `len` of an optional block stands
/// for the empty choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Domains(pub Vec<Vec<bool>>);

impl Domains {
    pub fn full(inst: &BlpInstance) -> Self {
        Self(
            inst.blocks
                .iter()
                .map(|b| vec![true; b.len + usize::from(b.optional)])
                .collect(),
        )
    }

    /// Restricts `block` to the single `option`.
    pub fn fix(&mut self, block: usize, option: usize) {
        self.0[block].iter_mut().enumerate().for_each(|(o, a)| *a = o == option);
    }

    pub fn alive(&self, block: usize) -> Vec<usize> {
        (0..self.0[block].len()).filter(|&o| self.0[block][o]).collect()
    }

    fn to_dom(&self, model: &Model) -> Dom {
        let mut dom = model.full_domain();
        for (b, opts) in self.0.iter().enumerate() {
            for (o, &a) in opts.iter().enumerate() {
                if !a {
                    model.kill(&mut dom, b, o);
                }
            }
        }
        dom
    }

    fn from_dom(model: &Model, dom: &Dom) -> Self {
        Self(
            (0..model.len.len())
                .map(|b| dom.alive[model.start[b]..model.start[b] + model.len[b]].to_vec())
                .collect(),
        )
    }
}

/// Propagation found a block with no surviving option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("propagation conflict")]
pub struct Conflict;

/// Removes options that cannot be part of any assignment satisfying the rows.
pub fn propagate(inst: &BlpInstance, domains: &Domains) -> Result<Domains, Conflict> {
    let model = Model::new(inst);
    let mut dom = domains.to_dom(&model);
    if dom.count.contains(&0) || !model.propagate(&mut dom, None) {
        return Err(Conflict);
    }
    Ok(Domains::from_dom(&model, &dom))
}

/// Separable upper bound on objective `level` over all designs.
pub fn root_bound(inst: &BlpInstance, level: usize) -> Result<f64, BlpError> {
    bound_with(inst, level, &Domains::full(inst))
}

/// Upper bound on objective `level` over the row-feasible designs within the
/// given domains: the best surviving option of every block, or the best
/// locally feasible combination of every cluster of tightly coupled blocks,
/// summed. `-inf` when nothing survives.
pub fn bound_with(inst: &BlpInstance, level: usize, domains: &Domains) -> Result<f64, BlpError> {
    let levels = inst.objectives.len();
    if level >= levels {
        return Err(BlpError::Level { level, levels });
    }
    let model = Model::new(inst);
    let dom = domains.to_dom(&model);
    if dom.count.contains(&0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(model.separable_max(&dom, &model.objs[level]) + model.offsets[level])
}

/// Solves the instance: lexicographic maximum of its objectives subject to
/// its rows, ties broken towards the lowest enumeration index.
pub fn solve(inst: &BlpInstance, config: &SolverConfig) -> Result<BlpSolution, BlpError> {
    let start = Instant::now();
    inst.validate()?;
    if config.gap_tolerance.is_nan() || config.gap_tolerance < 0.0 {
        return Err(BlpError::Config("gap tolerance must be non-negative".into()));
    }
    if config.node_limit == Some(0) || config.time_limit.is_some_and(|t| t.is_zero()) {
        return Err(BlpError::Config("limits must be positive".into()));
    }
    let deadline = config.time_limit.map(|t| start + t);
    let shared = Shared::new(config.node_limit, deadline);
    let mut model = Model::new(inst);
    let in_order = config.branching == Branching::InOrder;
    let parallel = !config.deterministic;

    let mut root = model.full_domain();
    if !model.propagate(&mut root, None) {
        return Ok(BlpSolution::new(inst, Status::Infeasible, None, 1, start));
    }

    let levels = inst.objectives.len();
    let mut pins: Vec<f64> = Vec::new();
    let mut pin_cuts: Vec<Cut> = Vec::new();
    let mut incumbent: Option<Incumbent> = None;
    for k in 0..levels {
        shared.set_incumbent(incumbent.clone().map(|mut inc| {
            inc.value = inst.objectives[k].value(&inc.x);
            inc
        }));
        if k == 0 {
            let mut dive = Search::new(&model, &shared, Mode::FirstFeasible);
            dive.guide = Some(0);
            dive.local_cap = Some(1000 + 20 * model.len.len() as u64);
            dive.run(root.clone(), None, false);
            if shared.stopped() {
                let best = shared.take_incumbent();
                return Ok(limit_solution(inst, &shared, best, start));
            }
        }
        let target = Some(shared.best_value()).filter(|v| v.is_finite());
        let (lambda, _) = model.subgradient(&root, k, target, config.subgradient_iterations);
        let improve = objective_cut(&model, k, lambda, 0.0, true);
        let mut search = Search::new(&model, &shared, Mode::Optimize(k));
        search.cuts = pin_cuts.clone();
        search.cuts.push(improve.clone());
        search.pins = pins.clone();
        search.in_order = in_order;
        search.gap = config.gap_tolerance;
        search.run(root.clone(), None, parallel);
        let best = shared.take_incumbent();
        if shared.stopped() {
            return Ok(limit_solution(inst, &shared, best.or(incumbent), start));
        }
        let Some(best) = best else {
            return Ok(BlpSolution::new(inst, Status::Infeasible, None, shared.nodes(), start));
        };
        let pin = best.value;
        pins.push(pin);
        model.add_pin(k, pin);
        pin_cuts.push(Cut {
            need: pin - LEX_TOL,
            improve: false,
            ..improve
        });
        if !model.propagate(&mut root, None) {
            // The pin row rounds differently from the exact objective; keep the optimum.
            return Ok(BlpSolution::new(
                inst,
                Status::Optimal,
                Some(best),
                shared.nodes(),
                start,
            ));
        }
        incumbent = Some(best);
    }

    // Lowest-index design meeting every pin.
    shared.set_incumbent(None);
    let mut last = Search::new(&model, &shared, Mode::FirstFeasible);
    last.cuts = pin_cuts;
    last.pins = pins;
    last.in_order = true;
    last.run(root, None, false);
    let found = shared.take_incumbent();
    if shared.stopped() {
        return Ok(limit_solution(inst, &shared, found.or(incumbent), start));
    }
    let status = match (&found, &incumbent, levels) {
        (None, None, _) => Status::Infeasible,
        _ => Status::Optimal,
    };
    Ok(BlpSolution::new(
        inst,
        status,
        found.or(incumbent),
        shared.nodes(),
        start,
    ))
}

fn objective_cut(model: &Model, level: usize, lambda: Vec<f64>, need: f64, improve: bool) -> Cut {
    let (adj, adj_const) = model.adjusted(level, &lambda);
    Cut {
        level,
        adj,
        adj_const,
        need,
        improve,
    }
}

fn limit_solution(inst: &BlpInstance, shared: &Shared, best: Option<Incumbent>, start: Instant) -> BlpSolution {
    BlpSolution::new(inst, Status::LimitReached, best, shared.nodes(), start)
}

/// Exhaustive reference solver over all branch-block combinations, using the
/// same lexicographic rule and tie-break as [`solve`].
pub fn enumerate_optimum(inst: &BlpInstance, cap: u64) -> Result<BlpSolution, BlpError> {
    let start = Instant::now();
    inst.validate()?;
    let count = inst.design_count();
    if count > cap as u128 {
        return Err(BlpError::EnumerationCap { count, cap });
    }
    let levels = inst.objectives.len();
    let best = lex_argmax(count as u64, levels, |i| {
        let x = inst.assignment(&inst.design_at(i as u128));
        Ok::<_, BlpError>(inst.is_feasible(&x).then(|| inst.objective_values(&x)))
    })?;
    let found = best.map(|(i, values)| {
        let choices = inst.design_at(i as u128);
        let x = inst.assignment(&choices);
        Incumbent {
            value: values.first().copied().unwrap_or(0.0),
            choices,
            x,
        }
    });
    let status = if found.is_some() {
        Status::Optimal
    } else {
        Status::Infeasible
    };
    Ok(BlpSolution::new(inst, status, found, count as u64, start))
}
