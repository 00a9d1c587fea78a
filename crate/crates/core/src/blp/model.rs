//! Block-structured view of a [`BlpInstance`] used by the search: domains
//! over block options, row propagation and objective bounds.

use std::collections::VecDeque;

use crate::lex::LEX_TOL;
use crate::lower::{BlockKind, BlpInstance, Transform};

/// Option `o < len` of a block selects variable `start + o`; the extra last
/// option of an optional block selects nothing.
#[derive(Debug, Clone)]
pub(crate) struct Model<'a> {
    pub inst: &'a BlpInstance,
    pub start: Vec<usize>,
    pub len: Vec<usize>,
    pub total: usize,
    pub lifted: Vec<Option<LiftInfo>>,
    pub has_lifted: bool,
    pub rows: Vec<MRow>,
    pub block_rows: Vec<Vec<usize>>,
    pub objs: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub integral: Vec<bool>,
    pub branch: Vec<usize>,
    pub clusters: Vec<Cluster>,
    pub cluster_of: Vec<Option<usize>>,
    /// Blocks outside every cluster and the clusters themselves: the
    /// independent parts of every bound.
    pub units: Vec<Unit>,
}

/// Most joint options a cluster may enumerate.
const CLUSTER_CAP: u128 = 4096;

/// Blocks merged because small rows couple them. `combos` lists the joint
/// options satisfying every row inside the cluster, as global option
/// indices, `blocks.len()` per combo.
#[derive(Debug, Clone)]
pub(crate) struct Cluster {
    pub blocks: Vec<usize>,
    pub combos: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Unit {
    Block(usize),
    Cluster(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct LiftInfo {
    pub parents: Vec<usize>,
    /// `coords[cell * parents.len() + k]` is the option of parent `k`.
    pub coords: Vec<u32>,
}

/// `Σ_parts coefs[option] <= rhs + tol`.
#[derive(Debug, Clone)]
pub(crate) struct MRow {
    pub parts: Vec<(usize, Vec<f64>)>,
    pub rhs: f64,
    pub tol: f64,
    /// All parts lie in one cluster, whose combos already satisfy the row.
    pub local: bool,
    /// Parts sharing a cluster, as `(cluster, [(part, position in cluster)])`.
    pub groups: Vec<(usize, Vec<(usize, usize)>)>,
    /// Parts bounded on their own.
    pub singles: Vec<usize>,
}

impl MRow {
    fn new(parts: Vec<(usize, Vec<f64>)>, rhs: f64, tol: f64) -> Self {
        let singles = (0..parts.len()).collect();
        Self {
            parts,
            rhs,
            tol,
            local: false,
            groups: Vec::new(),
            singles,
        }
    }
}

#[derive(Debug, Default)]
struct Scratch {
    mins: Vec<f64>,
    group_min: Vec<f64>,
    best: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dom {
    pub alive: Vec<bool>,
    pub count: Vec<u32>,
}

impl<'a> Model<'a> {
    pub fn new(inst: &'a BlpInstance) -> Self {
        let nb = inst.blocks.len();
        let mut start = Vec::with_capacity(nb);
        let mut len = Vec::with_capacity(nb);
        let mut total = 0;
        for b in &inst.blocks {
            start.push(total);
            let n = b.len + usize::from(b.optional);
            len.push(n);
            total += n;
        }
        let mut lifted = vec![None; nb];
        for (i, b) in inst.blocks.iter().enumerate() {
            if let BlockKind::Lifted { parents } = &b.kind {
                let lens: Vec<usize> = parents.iter().map(|&p| inst.blocks[p].len).collect();
                let mut coords = Vec::with_capacity(b.len * parents.len());
                for cell in 0..b.len {
                    let mut rest = cell;
                    let mut c = vec![0u32; parents.len()];
                    for k in (0..parents.len()).rev() {
                        c[k] = (rest % lens[k]) as u32;
                        rest /= lens[k];
                    }
                    coords.extend(c);
                }
                lifted[i] = Some(LiftInfo {
                    parents: parents.clone(),
                    coords,
                });
            }
        }
        let has_lifted = lifted.iter().any(Option::is_some);
        let branch = (0..nb).filter(|&b| lifted[b].is_none()).collect();
        let mut model = Self {
            inst,
            start,
            len,
            total,
            lifted,
            has_lifted,
            rows: Vec::new(),
            block_rows: vec![Vec::new(); nb],
            objs: Vec::new(),
            offsets: Vec::new(),
            integral: Vec::new(),
            branch,
            clusters: Vec::new(),
            cluster_of: vec![None; nb],
            units: Vec::new(),
        };
        for r in &inst.rows {
            if model.implied(r) {
                continue;
            }
            let parts = model.parts(&r.terms, 1.0);
            let tol = r.tolerance();
            model.push_row(MRow::new(parts.clone(), r.rhs, tol));
            if r.sense == crate::expr::Sense::Eq {
                let neg = parts
                    .into_iter()
                    .map(|(b, c)| (b, c.into_iter().map(|v| -v).collect()))
                    .collect();
                model.push_row(MRow::new(neg, -r.rhs, tol));
            }
        }
        model.build_clusters();
        for o in &inst.objectives {
            let mut flat = vec![0.0; model.total];
            for &(v, c) in &o.terms {
                let b = inst.variables[v].block;
                flat[model.start[b] + v - inst.blocks[b].start] += c;
            }
            model
                .integral
                .push(flat.iter().all(|c| c.fract() == 0.0 && c.abs() < 1e15));
            model.objs.push(flat);
            model.offsets.push(o.offset);
        }
        model
    }

    /// Rows enforced by the block structure itself.
    fn implied(&self, r: &crate::lower::Row) -> bool {
        if r.transform == Transform::Linking {
            return true;
        }
        let Some(&(first, _)) = r.terms.first() else {
            return false;
        };
        let b = self.inst.variables[first].block;
        let block = &self.inst.blocks[b];
        let covers = r.terms.len() == block.len
            && r.terms
                .iter()
                .enumerate()
                .all(|(k, &(v, c))| v == block.start + k && c == 1.0);
        covers
            && r.rhs == 1.0
            && match r.sense {
                crate::expr::Sense::Le => true,
                crate::expr::Sense::Eq => !block.optional,
            }
    }

    fn parts(&self, terms: &[(usize, f64)], sign: f64) -> Vec<(usize, Vec<f64>)> {
        let mut parts: Vec<(usize, Vec<f64>)> = Vec::new();
        for &(v, c) in terms {
            let b = self.inst.variables[v].block;
            let o = v - self.inst.blocks[b].start;
            match parts.iter_mut().find(|(pb, _)| *pb == b) {
                Some((_, coefs)) => coefs[o] += sign * c,
                None => {
                    let mut coefs = vec![0.0; self.len[b]];
                    coefs[o] = sign * c;
                    parts.push((b, coefs));
                }
            }
        }
        parts.sort_by_key(|p| p.0);
        parts
    }

    /// Merges blocks along rows, smallest support first, while the joint
    /// option count stays within [`CLUSTER_CAP`].
    fn build_clusters(&mut self) {
        let nb = self.len.len();
        let mut parent: Vec<usize> = (0..nb).collect();
        let mut size: Vec<u128> = self.len.iter().map(|&n| n as u128).collect();
        fn root(parent: &mut [usize], mut b: usize) -> usize {
            while parent[b] != b {
                parent[b] = parent[parent[b]];
                b = parent[b];
            }
            b
        }
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by_key(|&r| self.rows[r].parts.len());
        for r in order {
            let parts = &self.rows[r].parts;
            if parts.len() < 2 || parts.iter().any(|(b, _)| self.lifted[*b].is_some()) {
                continue;
            }
            let mut roots: Vec<usize> = parts.iter().map(|(b, _)| root(&mut parent, *b)).collect();
            roots.sort_unstable();
            roots.dedup();
            if roots.len() < 2 {
                continue;
            }
            let joint = roots
                .iter()
                .try_fold(1u128, |acc, &x| acc.checked_mul(size[x]).filter(|&p| p <= CLUSTER_CAP));
            if let Some(joint) = joint {
                for &x in &roots[1..] {
                    parent[x] = roots[0];
                }
                size[roots[0]] = joint;
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); nb];
        for b in 0..nb {
            let r = root(&mut parent, b);
            members[r].push(b);
        }
        let mut units = Vec::new();
        for b in 0..nb {
            let r = root(&mut parent, b);
            if members[r].len() == 1 {
                units.push(Unit::Block(b));
            } else if members[r][0] == b {
                let c = self.clusters.len();
                let blocks = members[r].clone();
                for &m in &blocks {
                    self.cluster_of[m] = Some(c);
                }
                self.clusters.push(Cluster {
                    blocks,
                    combos: Vec::new(),
                });
                units.push(Unit::Cluster(c));
            }
        }
        self.units = units;
        for r in 0..self.rows.len() {
            self.group_row(r);
        }
        for c in 0..self.clusters.len() {
            self.clusters[c].combos = self.enumerate_cluster(c);
        }
    }

    /// Joint options of cluster `c` that satisfy its local rows.
    fn enumerate_cluster(&self, c: usize) -> Vec<u32> {
        let blocks = &self.clusters[c].blocks;
        let local: Vec<&MRow> = self
            .rows
            .iter()
            .filter(|r| r.local && r.groups.first().is_some_and(|g| g.0 == c))
            .collect();
        let mut combos = Vec::new();
        let mut pick = vec![0usize; blocks.len()];
        loop {
            let ok = local.iter().all(|row| {
                let act: f64 = row.groups[0].1.iter().map(|&(k, pos)| row.parts[k].1[pick[pos]]).sum();
                act <= row.rhs + row.tol
            });
            if ok {
                combos.extend(blocks.iter().zip(&pick).map(|(&b, &o)| (self.start[b] + o) as u32));
            }
            let mut i = blocks.len();
            loop {
                if i == 0 {
                    return combos;
                }
                i -= 1;
                pick[i] += 1;
                if pick[i] < self.len[blocks[i]] {
                    break;
                }
                pick[i] = 0;
            }
        }
    }

    fn group_row(&mut self, r: usize) {
        let mut groups: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
        let mut singles = Vec::new();
        for (k, (b, _)) in self.rows[r].parts.iter().enumerate() {
            match self.cluster_of[*b] {
                Some(c) => {
                    let pos = self.clusters[c].blocks.iter().position(|x| x == b).expect("member");
                    match groups.iter_mut().find(|g| g.0 == c) {
                        Some(g) => g.1.push((k, pos)),
                        None => groups.push((c, vec![(k, pos)])),
                    }
                }
                None => singles.push(k),
            }
        }
        let row = &mut self.rows[r];
        let (grouped, alone): (Vec<_>, Vec<_>) = groups.into_iter().partition(|g| g.1.len() > 1);
        singles.extend(alone.into_iter().flat_map(|g| g.1.into_iter().map(|(k, _)| k)));
        singles.sort_unstable();
        row.local = singles.is_empty() && grouped.len() == 1;
        row.groups = grouped;
        row.singles = singles;
    }

    fn push_row(&mut self, row: MRow) {
        let r = self.rows.len();
        for (b, _) in &row.parts {
            self.block_rows[*b].push(r);
        }
        self.rows.push(row);
    }

    /// Adds `objective_level + offset >= pin - LEX_TOL` as a row.
    pub fn add_pin(&mut self, level: usize, pin: f64) {
        let terms: Vec<(usize, f64)> = self.inst.objectives[level].terms.clone();
        let parts = self.parts(&terms, -1.0);
        self.push_row(MRow::new(parts, -(pin - LEX_TOL - self.offsets[level]), 0.0));
        let r = self.rows.len() - 1;
        self.group_row(r);
        // Combos were filtered without this row.
        self.rows[r].local = false;
    }

    pub fn full_domain(&self) -> Dom {
        Dom {
            alive: vec![true; self.total],
            count: self.len.iter().map(|&n| n as u32).collect(),
        }
    }

    pub fn kill(&self, dom: &mut Dom, b: usize, o: usize) -> bool {
        let i = self.start[b] + o;
        if dom.alive[i] {
            dom.alive[i] = false;
            dom.count[b] -= 1;
            true
        } else {
            false
        }
    }

    pub fn fix(&self, dom: &mut Dom, b: usize, o: usize) {
        let s = self.start[b];
        dom.alive[s..s + self.len[b]].iter_mut().for_each(|a| *a = false);
        dom.alive[s + o] = true;
        dom.count[b] = 1;
    }

    pub fn alive_options(&self, dom: &Dom, b: usize) -> impl Iterator<Item = usize> + '_ {
        let s = self.start[b];
        let alive = dom.alive[s..s + self.len[b]].to_vec();
        alive.into_iter().enumerate().filter(|(_, a)| *a).map(|(o, _)| o)
    }

    /// Removes options that cannot appear in any row-feasible completion.
    /// Returns `false` on conflict. `seeds` restricts the initial queue to the
    /// rows touching those blocks.
    pub fn propagate(&self, dom: &mut Dom, seeds: Option<&[usize]>) -> bool {
        let nr = self.rows.len();
        let mut queued = vec![false; nr];
        let mut queue = VecDeque::new();
        let mut dirty = vec![false; self.clusters.len()];
        let mut changed = Vec::new();
        match seeds {
            None => {
                queue.extend(0..nr);
                queued.iter_mut().for_each(|q| *q = true);
                dirty.iter_mut().for_each(|d| *d = true);
            }
            Some(blocks) => changed.extend_from_slice(blocks),
        }
        let mut lift_dirty = self.has_lifted && seeds.is_none_or(|s| !s.is_empty());
        let mut scratch = Scratch::default();
        loop {
            for &b in &changed {
                lift_dirty |= self.has_lifted;
                if let Some(c) = self.cluster_of[b] {
                    dirty[c] = true;
                }
                for &r in &self.block_rows[b] {
                    if !queued[r] {
                        queued[r] = true;
                        queue.push_back(r);
                    }
                }
            }
            changed.clear();
            while let Some(r) = queue.pop_front() {
                queued[r] = false;
                let before = changed.len();
                if !self.propagate_row(dom, r, &mut scratch, &mut changed) {
                    return false;
                }
                for &b in &changed[before..] {
                    lift_dirty |= self.has_lifted;
                    if let Some(c) = self.cluster_of[b] {
                        dirty[c] = true;
                    }
                    for &r2 in &self.block_rows[b] {
                        if !queued[r2] {
                            queued[r2] = true;
                            queue.push_back(r2);
                        }
                    }
                }
            }
            changed.clear();
            for (c, d) in dirty.iter_mut().enumerate() {
                if std::mem::take(d) && !self.sync_cluster(dom, c, &mut changed) {
                    return false;
                }
            }
            if changed.is_empty() && lift_dirty {
                lift_dirty = false;
                if !self.sync_lifted(dom, &mut changed) {
                    return false;
                }
            }
            if changed.is_empty() {
                return true;
            }
        }
    }

    fn combo_count(&self, c: usize) -> usize {
        self.clusters[c].combos.len() / self.clusters[c].blocks.len()
    }

    /// Removes the options of cluster `c` that no surviving combo uses.
    fn sync_cluster(&self, dom: &mut Dom, c: usize, changed: &mut Vec<usize>) -> bool {
        let cluster = &self.clusters[c];
        let n = cluster.blocks.len();
        let base: Vec<usize> = cluster
            .blocks
            .iter()
            .scan(0, |acc, &b| {
                let at = *acc;
                *acc += self.len[b];
                Some(at)
            })
            .collect();
        let width = base[n - 1] + self.len[cluster.blocks[n - 1]];
        let mut support = vec![false; width];
        let mut any = false;
        for combo in cluster.combos.chunks_exact(n) {
            if combo.iter().all(|&g| dom.alive[g as usize]) {
                any = true;
                for (j, (&g, &b)) in combo.iter().zip(&cluster.blocks).enumerate() {
                    support[base[j] + g as usize - self.start[b]] = true;
                }
            }
        }
        if !any {
            return false;
        }
        for (j, &b) in cluster.blocks.iter().enumerate() {
            let s = self.start[b];
            let mut killed = false;
            for o in 0..self.len[b] {
                if dom.alive[s + o] && !support[base[j] + o] {
                    dom.alive[s + o] = false;
                    dom.count[b] -= 1;
                    killed = true;
                }
            }
            if killed {
                changed.push(b);
            }
        }
        true
    }

    fn propagate_row(&self, dom: &mut Dom, r: usize, sc: &mut Scratch, changed: &mut Vec<usize>) -> bool {
        let row = &self.rows[r];
        if row.local {
            return true;
        }
        sc.mins.clear();
        sc.mins.resize(row.parts.len(), 0.0);
        let mut total = 0.0;
        for &k in &row.singles {
            let (b, coefs) = &row.parts[k];
            let s = self.start[*b];
            let mut m = f64::INFINITY;
            for (o, c) in coefs.iter().enumerate() {
                if dom.alive[s + o] && *c < m {
                    m = *c;
                }
            }
            sc.mins[k] = m;
            total += m;
        }
        // Per group: its minimum and, per part option, the minimum over the
        // combos using that option.
        sc.group_min.clear();
        sc.best.clear();
        for (c, members) in &row.groups {
            let n = self.clusters[*c].blocks.len();
            let combos = &self.clusters[*c].combos;
            let base = sc.best.len();
            for &(k, _) in members {
                sc.best
                    .extend(std::iter::repeat_n(f64::INFINITY, self.len[row.parts[k].0]));
            }
            let mut gmin = f64::INFINITY;
            for i in 0..self.combo_count(*c) {
                let combo = &combos[i * n..(i + 1) * n];
                if !combo.iter().all(|&g| dom.alive[g as usize]) {
                    continue;
                }
                let mut v = 0.0;
                for &(k, pos) in members {
                    let (b, coefs) = &row.parts[k];
                    v += coefs[combo[pos] as usize - self.start[*b]];
                }
                gmin = gmin.min(v);
                let mut off = base;
                for &(k, pos) in members {
                    let b = row.parts[k].0;
                    let slot = &mut sc.best[off + combo[pos] as usize - self.start[b]];
                    *slot = slot.min(v);
                    off += self.len[b];
                }
            }
            sc.group_min.push(gmin);
            total += gmin;
        }
        let limit = row.rhs + row.tol;
        if total.is_nan() || total > limit {
            return false;
        }
        let slack = limit - total;
        for &k in &row.singles {
            let (b, coefs) = &row.parts[k];
            if dom.count[*b] == 1 {
                continue;
            }
            let s = self.start[*b];
            let mut killed = false;
            for (o, c) in coefs.iter().enumerate() {
                if dom.alive[s + o] && c - sc.mins[k] > slack {
                    dom.alive[s + o] = false;
                    dom.count[*b] -= 1;
                    killed = true;
                }
            }
            if killed {
                if dom.count[*b] == 0 {
                    return false;
                }
                changed.push(*b);
            }
        }
        let mut off = 0;
        for ((_, members), gmin) in row.groups.iter().zip(&sc.group_min) {
            for &(k, _) in members {
                let b = row.parts[k].0;
                let s = self.start[b];
                let mut killed = false;
                for o in 0..self.len[b] {
                    if dom.alive[s + o] && sc.best[off + o] - gmin > slack {
                        dom.alive[s + o] = false;
                        dom.count[b] -= 1;
                        killed = true;
                    }
                }
                off += self.len[b];
                if killed {
                    if dom.count[b] == 0 {
                        return false;
                    }
                    changed.push(b);
                }
            }
        }
        true
    }

    /// Keeps lifted cells and parent options mutually supported.
    fn sync_lifted(&self, dom: &mut Dom, changed: &mut Vec<usize>) -> bool {
        loop {
            let mut any = false;
            for (l, info) in self.lifted.iter().enumerate() {
                let Some(info) = info else { continue };
                let k = info.parents.len();
                let s = self.start[l];
                let mut support: Vec<Vec<bool>> = info.parents.iter().map(|&p| vec![false; self.len[p]]).collect();
                let mut killed = false;
                for cell in 0..self.len[l] {
                    if !dom.alive[s + cell] {
                        continue;
                    }
                    let coords = &info.coords[cell * k..(cell + 1) * k];
                    let ok = info
                        .parents
                        .iter()
                        .zip(coords)
                        .all(|(&p, &c)| dom.alive[self.start[p] + c as usize]);
                    if ok {
                        for (sup, &c) in support.iter_mut().zip(coords) {
                            sup[c as usize] = true;
                        }
                    } else {
                        dom.alive[s + cell] = false;
                        dom.count[l] -= 1;
                        killed = true;
                    }
                }
                if dom.count[l] == 0 {
                    return false;
                }
                if killed {
                    changed.push(l);
                }
                for (&p, sup) in info.parents.iter().zip(&support) {
                    let mut killed = false;
                    for (o, &ok) in sup.iter().enumerate() {
                        if !ok && self.kill(dom, p, o) {
                            killed = true;
                        }
                    }
                    if killed {
                        if dom.count[p] == 0 {
                            return false;
                        }
                        changed.push(p);
                        any = true;
                    }
                }
            }
            if !any {
                return true;
            }
        }
    }

    /// `Σ_u max_{alive} values` over all units: the best surviving option of
    /// every free block plus the best surviving combo of every cluster.
    pub fn separable_max(&self, dom: &Dom, values: &[f64]) -> f64 {
        self.units.iter().map(|&u| self.unit_max(dom, values, u).0).sum()
    }

    /// Best value of a unit and its argmax (an option of a block, a combo of
    /// a cluster); `-inf` when nothing survives.
    pub fn unit_max(&self, dom: &Dom, values: &[f64], u: Unit) -> (f64, usize) {
        let mut m = (f64::NEG_INFINITY, 0);
        match u {
            Unit::Block(b) => {
                let s = self.start[b];
                for o in 0..self.len[b] {
                    if dom.alive[s + o] && values[s + o] > m.0 {
                        m = (values[s + o], o);
                    }
                }
            }
            Unit::Cluster(c) => {
                let n = self.clusters[c].blocks.len();
                for (i, combo) in self.clusters[c].combos.chunks_exact(n).enumerate() {
                    if combo.iter().all(|&g| dom.alive[g as usize]) {
                        let v: f64 = combo.iter().map(|&g| values[g as usize]).sum();
                        if v > m.0 {
                            m = (v, i);
                        }
                    }
                }
            }
        }
        m
    }

    /// Like [`Self::unit_max`], also storing in `best[g]` the best value of
    /// the unit among completions that use option `g`.
    pub fn unit_option_best(&self, dom: &Dom, values: &[f64], u: Unit, best: &mut [f64]) -> f64 {
        match u {
            Unit::Block(b) => {
                let s = self.start[b];
                best[s..s + self.len[b]].copy_from_slice(&values[s..s + self.len[b]]);
                self.unit_max(dom, values, u).0
            }
            Unit::Cluster(c) => {
                let cluster = &self.clusters[c];
                for &b in &cluster.blocks {
                    let s = self.start[b];
                    best[s..s + self.len[b]].iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
                }
                let mut m = f64::NEG_INFINITY;
                for combo in cluster.combos.chunks_exact(cluster.blocks.len()) {
                    if combo.iter().all(|&g| dom.alive[g as usize]) {
                        let v: f64 = combo.iter().map(|&g| values[g as usize]).sum();
                        m = m.max(v);
                        for &g in combo {
                            best[g as usize] = best[g as usize].max(v);
                        }
                    }
                }
                m
            }
        }
    }

    /// Option chosen in each block by a full assignment of branch blocks.
    pub fn leaf_assignment(&self, dom: &Dom) -> (Vec<Option<usize>>, Vec<bool>) {
        let choices: Vec<Option<usize>> = self
            .branch
            .iter()
            .map(|&b| {
                let o = self.alive_options(dom, b).next().expect("fixed block");
                (o < self.inst.blocks[b].len).then_some(o)
            })
            .collect();
        let x = self.inst.assignment(&choices);
        (choices, x)
    }

    /// Lagrangian-adjusted values `obj - Σ λ_r·coefs_r` for the given multipliers.
    pub fn adjusted(&self, level: usize, lambda: &[f64]) -> (Vec<f64>, f64) {
        let mut adj = self.objs[level].clone();
        let mut constant = self.offsets[level];
        for (r, &l) in lambda.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let row = &self.rows[r];
            constant += l * (row.rhs + row.tol);
            for (b, coefs) in &row.parts {
                let s = self.start[*b];
                for (o, c) in coefs.iter().enumerate() {
                    adj[s + o] -= l * c;
                }
            }
        }
        (adj, constant)
    }

    /// Subgradient ascent on the Lagrangian dual of `level` over all current
    /// rows. Returns the best multipliers and their bound.
    pub fn subgradient(&self, dom: &Dom, level: usize, target: Option<f64>, iterations: usize) -> (Vec<f64>, f64) {
        let nr = self.rows.len();
        let mut lambda = vec![0.0; nr];
        let mut best = (
            lambda.clone(),
            self.separable_max(dom, &self.objs[level]) + self.offsets[level],
        );
        if nr == 0 {
            return best;
        }
        let mut theta = 2.0;
        let mut stall = 0;
        let mut g = vec![0.0; nr];
        for _ in 0..iterations {
            let (adj, constant) = self.adjusted(level, &lambda);
            let mut bound = constant;
            let mut pick = vec![0usize; self.len.len()];
            for &u in &self.units {
                let (m, arg) = self.unit_max(dom, &adj, u);
                match u {
                    Unit::Block(b) => pick[b] = arg,
                    Unit::Cluster(c) => {
                        let cluster = &self.clusters[c];
                        let n = cluster.blocks.len();
                        for (&b, &g) in cluster.blocks.iter().zip(&cluster.combos[arg * n..(arg + 1) * n]) {
                            pick[b] = g as usize - self.start[b];
                        }
                    }
                }
                bound += m;
            }
            if bound < best.1 - 1e-12 * best.1.abs().max(1.0) {
                best = (lambda.clone(), bound);
                stall = 0;
            } else {
                stall += 1;
                if stall >= 6 {
                    theta /= 2.0;
                    stall = 0;
                }
            }
            let mut norm = 0.0;
            for (r, row) in self.rows.iter().enumerate() {
                if row.local {
                    continue;
                }
                let mut act = 0.0;
                for (b, coefs) in &row.parts {
                    act += coefs[pick[*b]];
                }
                let gr = act - (row.rhs + row.tol);
                g[r] = if lambda[r] == 0.0 && gr < 0.0 { 0.0 } else { gr };
                norm += g[r] * g[r];
            }
            if norm == 0.0 || theta < 1e-5 {
                break;
            }
            let goal = target.unwrap_or(best.1 - 0.05 * best.1.abs().max(1.0));
            let gap = bound - goal;
            if gap <= 0.0 {
                break;
            }
            let step = theta * gap / norm;
            for r in 0..nr {
                lambda[r] = (lambda[r] + step * g[r]).max(0.0);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{DesignSpace, FeatureMatrix};
    use crate::expr::{feat, Constraint, DesignSpec, Objective};
    use crate::lower::lower;

    fn toy() -> BlpInstance {
        let motor = FeatureMatrix::new(
            "motor",
            vec!["cost".into(), "thrust".into()],
            vec![
                ("m1".into(), vec![300.0, 4.0]),
                ("m2".into(), vec![800.0, 6.0]),
                ("m3".into(), vec![1200.0, 9.0]),
            ],
        )
        .unwrap();
        let frame = FeatureMatrix::new(
            "frame",
            vec!["cost".into()],
            vec![("f1".into(), vec![100.0]), ("f2".into(), vec![250.0])],
        )
        .unwrap();
        let spec = DesignSpec::new(DesignSpace::new(vec![motor, frame]).unwrap())
            .maximize(Objective::new("thrust", feat("motor", "thrust")))
            .subject_to(Constraint::le(
                "budget",
                feat("motor", "cost") + feat("frame", "cost"),
                1000.0,
            ));
        lower(&spec).unwrap().0
    }

    #[test]
    fn budget_row_eliminates_expensive_motor() {
        let inst = toy();
        let m = Model::new(&inst);
        assert_eq!(m.rows.len(), 1);
        let mut dom = m.full_domain();
        assert!(m.propagate(&mut dom, None));
        assert_eq!(m.alive_options(&dom, 0).collect::<Vec<_>>(), vec![0, 1]);
        // Fixing m2 leaves only the cheap frame.
        m.fix(&mut dom, 0, 1);
        assert!(m.propagate(&mut dom, Some(&[0])));
        assert_eq!(m.alive_options(&dom, 1).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn subgradient_bound_is_admissible() {
        let inst = toy();
        let m = Model::new(&inst);
        let dom = m.full_domain();
        let (_, bound) = m.subgradient(&dom, 0, None, 100);
        assert!(bound >= 6.0 - 1e-9);
        assert!(bound <= 9.0);
    }
}
