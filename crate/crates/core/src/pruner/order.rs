use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::chart::{Span, SpanMap};
use crate::numerics::Real;
use crate::tree::BinaryTree;
use crate::{Error, Result};

/// One logit per boundary: `v[k-1]` scores the split between tokens `k` and
/// `k+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScores<F> {
    pub v: Vec<F>,
}

impl<F: Real> SplitScores<F> {
    pub fn new(v: Vec<F>) -> Self {
        SplitScores { v }
    }

    /// Sentence length the scores belong to.
    pub fn n(&self) -> usize {
        self.v.len() + 1
    }

    pub fn score(&self, k: usize) -> F {
        self.v[k - 1]
    }
}

/// Sets forbidden split points (e.g. inside multi-piece words) to `-inf`.
pub fn apply_nonsplittable<F: Real>(scores: &SplitScores<F>, forbidden: &[usize]) -> Result<SplitScores<F>> {
    let n = scores.n();
    let mut v = scores.v.clone();
    for &k in forbidden {
        if k == 0 || k >= n {
            return Err(Error::Input(format!("forbidden split {k} outside 1..{}", n - 1)));
        }
        v[k - 1] = F::neg_infinity();
    }
    if n >= 2 && v.iter().all(|x| *x == F::neg_infinity()) {
        return Err(Error::NoAdmissibleTree);
    }
    Ok(SplitScores { v })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitStep {
    pub split: usize,
    pub span: Span,
}

/// Top-down split sequence; every step splits a span produced by an earlier
/// step (or the root).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOrder {
    pub n: usize,
    pub steps: Vec<SplitStep>,
}

impl SplitOrder {
    /// Checks that the steps form a permutation of `1..n` with properly
    /// nested spans.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Structure("split order over empty sentence".into()));
        }
        if self.steps.len() != n - 1 {
            return Err(Error::Structure(format!("{} steps for n = {n}", self.steps.len())));
        }
        let mut pending: SpanMap<()> = SpanMap::new(n);
        if n >= 2 {
            pending.insert(Span::new(1, n), ());
        }
        for step in &self.steps {
            let s = step.span;
            if s.i == 0 || s.j > n || s.i > s.j || pending.remove(s).is_none() {
                return Err(Error::Structure(format!("step {step:?} splits a span that is not open")));
            }
            if step.split < s.i || step.split >= s.j {
                return Err(Error::Structure(format!("split {} outside {s:?}", step.split)));
            }
            let (l, r) = s.split_at(step.split);
            for c in [l, r] {
                if !c.is_leaf() {
                    pending.insert(c, ());
                }
            }
        }
        Ok(())
    }

    /// Pre-order split sequence of a tree.
    pub fn from_tree(tree: &BinaryTree) -> Self {
        let steps = tree
            .pre_order()
            .into_iter()
            .filter_map(|id| {
                let node = tree.node(id);
                node.children.map(|(l, _)| SplitStep { split: tree.node(l).span.j, span: node.span })
            })
            .collect();
        SplitOrder { n: tree.len(), steps }
    }

    pub fn tree(&self) -> Result<BinaryTree> {
        self.validate()?;
        let mut m = SpanMap::new(self.n);
        for s in &self.steps {
            m.insert(s.span, s.split);
        }
        BinaryTree::from_splits(self.n, &m)
    }

    /// Merge order: the split sequence reversed.
    pub fn merge_order(&self) -> Vec<usize> {
        self.steps.iter().rev().map(|s| s.split).collect()
    }

    /// Height of each split point in the induced tree, indexed by `k - 1`.
    /// A split joining two leaves has height 1.
    pub fn heights(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let mut h: SpanMap<usize> = SpanMap::new(self.n);
        let mut out = vec![0; self.n - 1];
        for step in self.steps.iter().rev() {
            let (l, r) = step.span.split_at(step.split);
            let hl = h.get(l).copied().unwrap_or(0);
            let hr = h.get(r).copied().unwrap_or(0);
            let height = 1 + hl.max(hr);
            h.insert(step.span, height);
            out[step.split - 1] = height;
        }
        Ok(out)
    }

    /// Split points grouped by height (ascending); within a group points
    /// keep their merge order.
    pub fn merge_groups(&self) -> Result<Vec<Vec<usize>>> {
        let heights = self.heights()?;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in self.merge_order() {
            groups.entry(heights[k - 1]).or_default().push(k);
        }
        Ok(groups.into_values().collect())
    }
}

/// Recursive top-down argmax: each open span is split at its best remaining
/// point (ties to the smallest `k`); steps are emitted in descending score
/// order across open spans, so the sequence is also a valid top-down order.
pub fn split_order<F: Real>(scores: &SplitScores<F>) -> SplitOrder {
    let n = scores.n();
    let best = |s: Span| -> (usize, F) {
        let mut bk = s.i;
        let mut bv = scores.score(s.i);
        for k in s.i + 1..s.j {
            let v = scores.score(k);
            if v > bv {
                bk = k;
                bv = v;
            }
        }
        (bk, bv)
    };
    let mut open: Vec<(Span, usize, F)> = Vec::new();
    if n >= 2 {
        let root = Span::new(1, n);
        let (k, v) = best(root);
        open.push((root, k, v));
    }
    let mut steps = Vec::with_capacity(n.saturating_sub(1));
    while !open.is_empty() {
        let mut pick = 0;
        for (idx, cand) in open.iter().enumerate().skip(1) {
            let cur = &open[pick];
            if cand.2 > cur.2 || (cand.2 == cur.2 && cand.1 < cur.1) {
                pick = idx;
            }
        }
        let (span, k, _) = open.swap_remove(pick);
        steps.push(SplitStep { split: k, span });
        let (l, r) = span.split_at(k);
        for c in [l, r] {
            if !c.is_leaf() {
                let (bk, bv) = best(c);
                open.push((c, bk, bv));
            }
        }
    }
    SplitOrder { n, steps }
}
