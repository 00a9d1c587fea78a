//! Depth-first branch and bound over module blocks.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use super::model::{Dom, Model, Unit};
use crate::lex::meets_pins;

#[derive(Debug, Clone)]
pub(crate) struct Incumbent {
    pub value: f64,
    pub choices: Vec<Option<usize>>,
    pub x: Vec<bool>,
}

/// State shared by all workers of one solve.
pub(crate) struct Shared {
    best_bits: AtomicU64,
    best: Mutex<Option<Incumbent>>,
    nodes: AtomicU64,
    stop: AtomicBool,
    node_limit: Option<u64>,
    deadline: Option<Instant>,
}

impl Shared {
    pub fn new(node_limit: Option<u64>, deadline: Option<Instant>) -> Self {
        Self {
            best_bits: AtomicU64::new(f64::NEG_INFINITY.to_bits()),
            best: Mutex::new(None),
            nodes: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            node_limit,
            deadline,
        }
    }

    pub fn best_value(&self) -> f64 {
        f64::from_bits(self.best_bits.load(Ordering::Acquire))
    }

    pub fn nodes(&self) -> u64 {
        self.nodes.load(Ordering::Relaxed)
    }

    pub fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    pub fn set_incumbent(&self, inc: Option<Incumbent>) {
        let bits = inc.as_ref().map_or(f64::NEG_INFINITY, |i| i.value).to_bits();
        let mut guard = self.best.lock().expect("incumbent lock");
        *guard = inc;
        self.best_bits.store(bits, Ordering::Release);
    }

    pub fn take_incumbent(&self) -> Option<Incumbent> {
        self.best.lock().expect("incumbent lock").clone()
    }

    /// Replaces the incumbent if `inc` is strictly better.
    fn offer(&self, inc: Incumbent) {
        let mut guard = self.best.lock().expect("incumbent lock");
        if guard.as_ref().is_none_or(|b| inc.value > b.value) {
            self.best_bits.store(inc.value.to_bits(), Ordering::Release);
            *guard = Some(inc);
        }
    }

    /// Counts a node; returns `true` when a limit has been reached.
    fn tick(&self) -> bool {
        if self.stopped() {
            return true;
        }
        let n = self.nodes.fetch_add(1, Ordering::Relaxed) + 1;
        let over_nodes = self.node_limit.is_some_and(|l| n > l);
        let over_time = n.is_multiple_of(256) && self.deadline.is_some_and(|d| Instant::now() >= d);
        if over_nodes || over_time {
            self.stop.store(true, Ordering::Relaxed);
            return true;
        }
        false
    }
}

/// A bound requirement on one objective level.
///
/// Pins require `value >= need`; the improvement cut of the level being
/// optimized requires `value > incumbent + gap`.
#[derive(Debug, Clone)]
pub(crate) struct Cut {
    pub level: usize,
    /// Lagrangian-adjusted option values and their constant.
    pub adj: Vec<f64>,
    pub adj_const: f64,
    pub need: f64,
    pub improve: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Mode {
    /// Maximize `level`, keeping the best design in the shared incumbent.
    Optimize(usize),
    /// Stop at the first design satisfying rows and pins.
    FirstFeasible,
}

pub(crate) struct Search<'s, 'a> {
    pub model: &'s Model<'a>,
    pub shared: &'s Shared,
    pub cuts: Vec<Cut>,
    pub pins: Vec<f64>,
    pub mode: Mode,
    pub in_order: bool,
    pub gap: f64,
    /// Objective level used to order options in [`Mode::FirstFeasible`].
    pub guide: Option<usize>,
    /// Optional cap on this search's own nodes (used for the initial dive).
    pub local_cap: Option<u64>,
    pub local_nodes: AtomicU64,
    pub found: AtomicBool,
}

impl<'s, 'a> Search<'s, 'a> {
    pub fn new(model: &'s Model<'a>, shared: &'s Shared, mode: Mode) -> Self {
        Self {
            model,
            shared,
            cuts: Vec::new(),
            pins: Vec::new(),
            mode,
            in_order: false,
            gap: 0.0,
            guide: None,
            local_cap: None,
            local_nodes: AtomicU64::new(0),
            found: AtomicBool::new(false),
        }
    }

    fn halted(&self) -> bool {
        self.shared.stopped() || self.found.load(Ordering::Relaxed)
    }

    /// Explores the subtree of `dom`. `seeds` lists the blocks changed since
    /// the parent was propagated (`None` at the root).
    pub fn run(&self, dom: Dom, seeds: Option<&[usize]>, parallel: bool) {
        let mut dom = dom;
        let Some(b) = self.enter(&mut dom, seeds) else {
            return;
        };
        let options = self.order(&dom, b);
        if parallel && matches!(self.mode, Mode::Optimize(_)) {
            options.par_iter().for_each(|&o| {
                let mut child = dom.clone();
                self.model.fix(&mut child, b, o);
                self.node(child, &[b]);
            });
        } else {
            for o in options {
                if self.halted() {
                    return;
                }
                let mut child = dom.clone();
                self.model.fix(&mut child, b, o);
                self.node(child, &[b]);
            }
        }
    }

    fn node(&self, mut dom: Dom, seeds: &[usize]) {
        let Some(b) = self.enter(&mut dom, Some(seeds)) else {
            return;
        };
        for o in self.order(&dom, b) {
            if self.halted() {
                return;
            }
            let mut child = dom.clone();
            self.model.fix(&mut child, b, o);
            self.node(child, &[b]);
        }
    }

    /// Propagates and bounds a node. Returns the block to branch on, or
    /// `None` when the node is closed (pruned, a leaf, or the search halted).
    fn enter(&self, dom: &mut Dom, seeds: Option<&[usize]>) -> Option<usize> {
        if self.halted() || self.shared.tick() {
            return None;
        }
        if let Some(cap) = self.local_cap {
            if self.local_nodes.fetch_add(1, Ordering::Relaxed) >= cap {
                self.found.store(true, Ordering::Relaxed);
                return None;
            }
        }
        if !self.model.propagate(dom, seeds) || !self.bound_and_fix(dom) {
            return None;
        }
        match self.choose(dom) {
            Some(b) => Some(b),
            None => {
                self.leaf(dom);
                None
            }
        }
    }

    fn choose(&self, dom: &Dom) -> Option<usize> {
        let open = self.model.branch.iter().copied().filter(|&b| dom.count[b] > 1);
        if self.in_order {
            open.min()
        } else {
            open.min_by_key(|&b| (dom.count[b], b))
        }
    }

    fn order(&self, dom: &Dom, b: usize) -> Vec<usize> {
        let mut opts: Vec<usize> = self.model.alive_options(dom, b).collect();
        if self.in_order {
            return opts;
        }
        let values = self
            .cuts
            .iter()
            .find(|c| c.improve)
            .map(|c| &c.adj)
            .or_else(|| match self.mode {
                Mode::Optimize(k) => Some(&self.model.objs[k]),
                Mode::FirstFeasible => self.guide.map(|l| &self.model.objs[l]),
            });
        if let Some(values) = values {
            let s = self.model.start[b];
            opts.sort_by(|&x, &y| values[s + y].total_cmp(&values[s + x]).then(x.cmp(&y)));
        }
        opts
    }

    fn leaf(&self, dom: &Dom) {
        let (choices, x) = self.model.leaf_assignment(dom);
        if !self.model.inst.is_feasible(&x) {
            return;
        }
        let values = self.model.inst.objective_values(&x);
        if !meets_pins(&values, &self.pins) {
            return;
        }
        match self.mode {
            Mode::Optimize(k) => self.shared.offer(Incumbent {
                value: values[k],
                choices,
                x,
            }),
            Mode::FirstFeasible => {
                let value = values.first().copied().unwrap_or(0.0);
                self.shared.offer(Incumbent { value, choices, x });
                self.found.store(true, Ordering::Relaxed);
            }
        }
    }

    /// Applies every cut to the node, removing options whose best completion
    /// cannot meet a cut. Returns `false` when the node is pruned.
    fn bound_and_fix(&self, dom: &mut Dom) -> bool {
        let model = self.model;
        let mut maxes = vec![0.0; model.units.len()];
        let mut best = vec![0.0; model.total];
        for _ in 0..4 {
            let mut killed: Vec<usize> = Vec::new();
            for cut in &self.cuts {
                let (need, strict) = if cut.improve {
                    let best = self.shared.best_value();
                    if best == f64::NEG_INFINITY {
                        continue;
                    }
                    (best + self.gap, true)
                } else {
                    (cut.need, false)
                };
                let offset = model.offsets[cut.level];
                let integral = model.integral[cut.level];
                let families: [(&[f64], f64); 2] = [(&model.objs[cut.level], offset), (&cut.adj, cut.adj_const)];
                for (values, constant) in families {
                    if !self.filter(
                        dom,
                        values,
                        constant,
                        offset,
                        integral,
                        need,
                        strict,
                        &mut maxes,
                        &mut best,
                        &mut killed,
                    ) {
                        return false;
                    }
                }
            }
            if killed.is_empty() {
                return true;
            }
            killed.sort_unstable();
            killed.dedup();
            if !model.propagate(dom, Some(&killed)) {
                return false;
            }
        }
        true
    }

    #[allow(clippy::too_many_arguments)]
    fn filter(
        &self,
        dom: &mut Dom,
        values: &[f64],
        constant: f64,
        offset: f64,
        integral: bool,
        need: f64,
        strict: bool,
        maxes: &mut [f64],
        best: &mut [f64],
        killed: &mut Vec<usize>,
    ) -> bool {
        let model = self.model;
        let mut total = constant;
        for (u, m) in model.units.iter().zip(maxes.iter_mut()) {
            *m = model.unit_option_best(dom, values, *u, best);
            total += *m;
        }
        let passes = |v: f64| {
            let v = if integral {
                (v - offset + 1e-9).floor() + offset
            } else {
                v
            };
            if strict {
                v > need
            } else {
                v >= need
            }
        };
        if !passes(total) {
            return false;
        }
        for (&u, &m) in model.units.iter().zip(maxes.iter()) {
            let base = total - m;
            let blocks = match u {
                Unit::Block(ref b) => std::slice::from_ref(b),
                Unit::Cluster(c) => &model.clusters[c].blocks[..],
            };
            for &b in blocks {
                if dom.count[b] <= 1 {
                    continue;
                }
                let s = model.start[b];
                let mut any = false;
                for o in 0..model.len[b] {
                    if dom.alive[s + o] && !passes(base + best[s + o]) {
                        dom.alive[s + o] = false;
                        dom.count[b] -= 1;
                        any = true;
                    }
                }
                if any {
                    if dom.count[b] == 0 {
                        return false;
                    }
                    killed.push(b);
                }
            }
        }
        true
    }
}
