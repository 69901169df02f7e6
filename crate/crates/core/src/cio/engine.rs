use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{compose, scaled_dot, CioStack, Slot};
use crate::chart::{Cell, ChartLayer, Schedule, Span, SpanMap};
use crate::numerics::{Ctx, Mlp, Real, Tape, Var};
use crate::tree::BinaryTree;
use crate::{Error, Result};

/// How the outside pass combines candidates from several parents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutsideMode {
    /// Incremental log-sum-exp accumulation, one parent at a time.
    #[default]
    Cumulative,
    /// One softmax over all candidates once every parent is done.
    Direct,
}

/// Work counters of an engine run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub inside_composes: usize,
    pub outside_composes: usize,
    /// Inside batches executed, summed over layers.
    pub inside_steps: usize,
    /// Non-leaf cells encoded, summed over layers.
    pub cells: usize,
}

impl Counters {
    pub fn composes(&self) -> usize {
        self.inside_composes + self.outside_composes
    }

    pub fn add(&mut self, other: &Counters) {
        self.inside_composes += other.inside_composes;
        self.outside_composes += other.outside_composes;
        self.inside_steps += other.inside_steps;
        self.cells += other.cells;
    }
}

/// Outside representations of the previous layer.
#[derive(Debug, Clone, Copy)]
pub enum PrevOutside<'a> {
    /// The layer-0 tensor, identical for every cell.
    Shared(Var),
    Layer(&'a SpanMap<Var>),
}

impl PrevOutside<'_> {
    fn get(&self, s: Span) -> Result<Var> {
        match self {
            PrevOutside::Shared(v) => Ok(*v),
            PrevOutside::Layer(m) => m
                .get(s)
                .copied()
                .ok_or_else(|| Error::ScheduleViolation(format!("no previous-layer outside for {s:?}"))),
        }
    }
}

/// Recorded values of one CIO layer.
#[derive(Debug, Clone)]
pub struct LayerVars {
    pub layer: usize,
    pub inside: SpanMap<Var>,
    pub inside_score: SpanMap<Var>,
    /// `a[k]` aligned with the cell's split list.
    pub split_scores: SpanMap<Vec<Var>>,
    /// Softmax weights over the cell's splits.
    pub split_weights: SpanMap<Var>,
    pub outside: SpanMap<Var>,
    pub outside_score: SpanMap<Var>,
    pub root_outside: Var,
}

fn missing(what: &str, s: Span) -> Error {
    Error::ScheduleViolation(format!("{what} of {s:?} is not available yet"))
}

fn cached(ctx: &mut Ctx<'_, impl Real>, cache: &mut SpanMap<Var>, s: Span, mlp: &Mlp, x: Var) -> Var {
    if let Some(v) = cache.get(s) {
        return *v;
    }
    let v = mlp.forward(ctx, x);
    cache.insert(s, v);
    v
}

/// Inside pass of layer `l`: fills `ê`, `a` for every scheduled cell in batch
/// order. Leaves take the token embeddings with `a = 0`.
pub fn inside_pass<F: Real>(
    ctx: &mut Ctx<'_, F>,
    stack: &CioStack,
    l: usize,
    schedule: &Schedule,
    leaves: &[Var],
    prev: PrevOutside<'_>,
    counters: &mut Counters,
) -> Result<LayerVars> {
    let n = schedule.n;
    if leaves.len() != n {
        return Err(Error::Input(format!("{} leaf vectors for n = {n}", leaves.len())));
    }
    let params = stack.inside_params(l);
    let compat = &stack.compat;
    let zero = ctx.scalar(F::zero());
    let mut inside = SpanMap::new(n);
    let mut inside_score = SpanMap::new(n);
    for (i, &leaf) in leaves.iter().enumerate() {
        inside.insert(Span::leaf(i + 1), leaf);
        inside_score.insert(Span::leaf(i + 1), zero);
    }
    let mut split_scores = SpanMap::new(n);
    let mut split_weights = SpanMap::new(n);
    let mut u_left: SpanMap<Var> = SpanMap::new(n);
    let mut u_right: SpanMap<Var> = SpanMap::new(n);
    for batch in schedule.batches.iter().skip(1) {
        counters.inside_steps += 1;
        for &s in batch {
            counters.cells += 1;
            let third = prev.get(s)?;
            let ks = schedule.splits_of(s);
            let mut cands = Vec::with_capacity(ks.len());
            let mut scores = Vec::with_capacity(ks.len());
            for &k in ks {
                let (ls, rs) = s.split_at(k);
                let el = *inside.get(ls).ok_or_else(|| missing("inside", ls))?;
                let er = *inside.get(rs).ok_or_else(|| missing("inside", rs))?;
                let al = *inside_score.get(ls).ok_or_else(|| missing("inside score", ls))?;
                let ar = *inside_score.get(rs).ok_or_else(|| missing("inside score", rs))?;
                let out = compose(ctx, params, el, er, third, &[Slot::Parent]);
                cands.push(ctx.row(out, 0));
                counters.inside_composes += 1;
                let ul = cached(ctx, &mut u_left, ls, &compat.inside_left, el);
                let ur = cached(ctx, &mut u_right, rs, &compat.inside_right, er);
                let abar = scaled_dot(ctx, ul, ur);
                let t = ctx.add(abar, al);
                scores.push(ctx.add(t, ar));
            }
            let svec = ctx.concat_cols(&scores);
            let w = ctx.softmax(svec);
            let cand = ctx.concat_rows(&cands);
            inside.insert(s, ctx.matmul(w, cand));
            inside_score.insert(s, ctx.dot(w, svec));
            split_scores.insert(s, scores);
            split_weights.insert(s, w);
        }
    }
    let root_outside = ctx.param(stack.layers[l].root_outside);
    Ok(LayerVars {
        layer: l,
        inside,
        inside_score,
        split_scores,
        split_weights,
        outside: SpanMap::new(n),
        outside_score: SpanMap::new(n),
        root_outside,
    })
}

enum Acc {
    Running { bcum: Var, e: Var, b: Var },
    Pending { e: Vec<Var>, b: Vec<Var> },
}

fn accumulate<F: Real>(ctx: &mut Ctx<'_, F>, acc: &mut SpanMap<Acc>, mode: OutsideMode, s: Span, e: Var, b: Var) {
    match (mode, acc.remove(s)) {
        // The accumulator starts at -inf, so the first update is an exact copy.
        (OutsideMode::Cumulative, None) => {
            acc.insert(s, Acc::Running { bcum: b, e, b });
        }
        (OutsideMode::Cumulative, Some(Acc::Running { bcum, e: e0, b: b0 })) => {
            let logits = ctx.concat_cols(&[bcum, b]);
            let w = ctx.softmax(logits);
            let es = ctx.concat_rows(&[e0, e]);
            let bs = ctx.concat_cols(&[b0, b]);
            let e1 = ctx.matmul(w, es);
            let b1 = ctx.dot(w, bs);
            let bcum1 = ctx.log_sum_exp(logits);
            acc.insert(s, Acc::Running { bcum: bcum1, e: e1, b: b1 });
        }
        (OutsideMode::Direct, prev) => {
            let (mut es, mut bs) = match prev {
                Some(Acc::Pending { e, b }) => (e, b),
                _ => (Vec::new(), Vec::new()),
            };
            es.push(e);
            bs.push(b);
            acc.insert(s, Acc::Pending { e: es, b: bs });
        }
        (OutsideMode::Cumulative, Some(Acc::Pending { .. })) => unreachable!("mode is fixed per pass"),
    }
}

fn finalize<F: Real>(ctx: &mut Ctx<'_, F>, acc: &mut SpanMap<Acc>, s: Span) -> Result<(Var, Var)> {
    match acc.remove(s) {
        Some(Acc::Running { e, b, .. }) => Ok((e, b)),
        Some(Acc::Pending { e, b }) => {
            let bvec = ctx.concat_cols(&b);
            let w = ctx.softmax(bvec);
            let es = ctx.concat_rows(&e);
            Ok((ctx.matmul(w, es), ctx.dot(w, bvec)))
        }
        None => Err(Error::ScheduleViolation(format!("outside of {s:?} has no parent contribution"))),
    }
}

/// Outside pass of layer `l`, walking the batches in reverse. Each
/// (parent, split) pair runs one compose call whose left and right slots
/// give the candidates for the two children.
pub fn outside_pass<F: Real>(
    ctx: &mut Ctx<'_, F>,
    stack: &CioStack,
    schedule: &Schedule,
    vars: &mut LayerVars,
    mode: OutsideMode,
    counters: &mut Counters,
) -> Result<()> {
    let n = schedule.n;
    let params = stack.outside_params(vars.layer);
    let compat = &stack.compat;
    let root = schedule.root();
    let zero = ctx.scalar(F::zero());
    vars.outside.insert(root, vars.root_outside);
    vars.outside_score.insert(root, zero);
    let mut acc: SpanMap<Acc> = SpanMap::new(n);
    let mut u_sib: SpanMap<Var> = SpanMap::new(n);
    for batch in schedule.batches.iter().skip(1).rev() {
        for &p in batch {
            let (ep, bp) = if p == root {
                (vars.root_outside, zero)
            } else {
                let (e, b) = finalize(ctx, &mut acc, p)?;
                vars.outside.insert(p, e);
                vars.outside_score.insert(p, b);
                (e, b)
            };
            let up = compat.outside_left.forward(ctx, ep);
            for &k in schedule.splits_of(p) {
                let (ls, rs) = p.split_at(k);
                let el = *vars.inside.get(ls).ok_or_else(|| missing("inside", ls))?;
                let er = *vars.inside.get(rs).ok_or_else(|| missing("inside", rs))?;
                let al = *vars.inside_score.get(ls).ok_or_else(|| missing("inside score", ls))?;
                let ar = *vars.inside_score.get(rs).ok_or_else(|| missing("inside score", rs))?;
                let out = compose(ctx, params, el, er, ep, &[Slot::Left, Slot::Right]);
                counters.outside_composes += 1;
                let cl = ctx.row(out, 0);
                let cr = ctx.row(out, 1);
                let ur = cached(ctx, &mut u_sib, rs, &compat.outside_right, er);
                let bbar = scaled_dot(ctx, up, ur);
                let t = ctx.add(ar, bbar);
                let bl = ctx.add(t, bp);
                let ul = cached(ctx, &mut u_sib, ls, &compat.outside_right, el);
                let bbar = scaled_dot(ctx, up, ul);
                let t = ctx.add(al, bbar);
                let br = ctx.add(t, bp);
                accumulate(ctx, &mut acc, mode, ls, cl, bl);
                accumulate(ctx, &mut acc, mode, rs, cr, br);
            }
        }
    }
    if n == 1 {
        return Ok(());
    }
    for i in 1..=n {
        let s = Span::leaf(i);
        let (e, b) = finalize(ctx, &mut acc, s)?;
        vars.outside.insert(s, e);
        vars.outside_score.insert(s, b);
    }
    Ok(())
}

/// Runs all `L` layers, each inside pass reading the previous layer's
/// outside representations.
pub fn run_stack<F: Real>(
    ctx: &mut Ctx<'_, F>,
    stack: &CioStack,
    schedule: &Schedule,
    leaves: &[Var],
    mode: OutsideMode,
    counters: &mut Counters,
) -> Result<Vec<LayerVars>> {
    let mut out: Vec<LayerVars> = Vec::with_capacity(stack.layers.len());
    let shared = ctx.param(stack.outside0);
    for l in 0..stack.layers.len() {
        let prev = match out.last() {
            Some(v) => PrevOutside::Layer(&v.outside),
            None => PrevOutside::Shared(shared),
        };
        let mut vars = inside_pass(ctx, stack, l, schedule, leaves, prev, counters)?;
        outside_pass(ctx, stack, schedule, &mut vars, mode, counters)?;
        out.push(vars);
    }
    Ok(out)
}

impl LayerVars {
    /// Copies the recorded values into a chart table.
    pub fn to_chart<F: Real>(&self, tape: &Tape<F>, schedule: &Schedule) -> Result<ChartLayer<F>> {
        let n = schedule.n;
        let mut cells = SpanMap::new(n);
        for batch in &schedule.batches {
            for &s in batch {
                let get = |m: &SpanMap<Var>, what: &str| m.get(s).copied().ok_or_else(|| missing(what, s));
                let splits = schedule.splits_of(s).to_vec();
                let split_scores = self
                    .split_scores
                    .get(s)
                    .map(|v| v.iter().map(|x| tape.scalar_value(*x)).collect())
                    .unwrap_or_default();
                cells.insert(
                    s,
                    Cell {
                        span: s,
                        inside: tape.value(get(&self.inside, "inside")?).data().to_vec(),
                        inside_score: tape.scalar_value(get(&self.inside_score, "inside score")?),
                        outside: tape.value(get(&self.outside, "outside")?).data().to_vec(),
                        outside_score: tape.scalar_value(get(&self.outside_score, "outside score")?),
                        splits,
                        split_scores,
                    },
                );
            }
        }
        Ok(ChartLayer { layer: self.layer, cells, root_outside: tape.value(self.root_outside).data().to_vec() })
    }
}

/// Best tree by recursive argmax of `a[k]` from the root, ties to the
/// smallest split.
pub fn induce_tree<F: Real>(chart: &ChartLayer<F>) -> Result<BinaryTree> {
    let n = chart.cells.n();
    BinaryTree::from_split_fn(n, |s| {
        let cell = chart.cell(s).ok_or_else(|| Error::Structure(format!("tree reaches unscheduled {s:?}")))?;
        let mut best = 0;
        for (idx, v) in cell.split_scores.iter().enumerate() {
            if *v > cell.split_scores[best] {
                best = idx;
            }
        }
        cell.splits.get(best).copied().ok_or_else(|| Error::Structure(format!("cell {s:?} has no splits")))
    })
}

/// Per-node values of a tree-restricted (fast) encoding.
#[derive(Debug, Clone)]
pub struct TreeVars {
    pub inside: Vec<Var>,
    pub outside: Vec<Var>,
}

/// Composes along the edges of a fixed tree only: one inside and one outside
/// compose call per internal node and layer.
pub fn run_tree<F: Real>(
    ctx: &mut Ctx<'_, F>,
    stack: &CioStack,
    tree: &BinaryTree,
    leaves: &[Var],
    counters: &mut Counters,
) -> Result<Vec<TreeVars>> {
    let n = tree.len();
    if leaves.len() != n {
        return Err(Error::Input(format!("{} leaf vectors for n = {n}", leaves.len())));
    }
    let shared = ctx.param(stack.outside0);
    let post = tree.post_order();
    let pre = tree.pre_order();
    let mut out: Vec<TreeVars> = Vec::with_capacity(stack.layers.len());
    for l in 0..stack.layers.len() {
        let mut inside = vec![shared; tree.nodes().len()];
        for &id in &post {
            let node = tree.node(id);
            match node.children {
                None => inside[id] = leaves[node.span.i - 1],
                Some((a, b)) => {
                    let third = out.last().map_or(shared, |p: &TreeVars| p.outside[id]);
                    let o = compose(ctx, stack.inside_params(l), inside[a], inside[b], third, &[Slot::Parent]);
                    inside[id] = ctx.row(o, 0);
                    counters.inside_composes += 1;
                    counters.cells += 1;
                }
            }
        }
        counters.inside_steps += tree.height();
        let mut outside = vec![shared; tree.nodes().len()];
        outside[tree.root()] = ctx.param(stack.layers[l].root_outside);
        for &id in &pre {
            if let Some((a, b)) = tree.node(id).children {
                let o = compose(
                    ctx,
                    stack.outside_params(l),
                    inside[a],
                    inside[b],
                    outside[id],
                    &[Slot::Left, Slot::Right],
                );
                counters.outside_composes += 1;
                outside[a] = ctx.row(o, 0);
                outside[b] = ctx.row(o, 1);
            }
        }
        out.push(TreeVars { inside, outside });
    }
    Ok(out)
}
