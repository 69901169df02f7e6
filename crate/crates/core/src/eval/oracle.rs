//! Cubic full-chart reference implementation of the CIO stack.
//!
//! Shares no code with the pruned engine: it evaluates every span and every
//! split with the tape-free reference layers, combines outside candidates
//! with one direct softmax per span, and finds the best tree by exhaustive
//! enumeration.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::chart::{Span, SpanMap};
use crate::cio::{CioStack, ComposeParams, Slot};
use crate::numerics::{reference, softmax_stable, Mlp, ParamStore, Real};
use crate::tree::BinaryTree;
use crate::{Error, Result};

/// Largest sentence the oracle accepts.
pub const ORACLE_MAX_LEN: usize = 12;

#[derive(Debug, Clone)]
pub struct OracleLayer<F> {
    pub inside: SpanMap<Vec<F>>,
    pub inside_score: SpanMap<F>,
    /// `a[k]` for `k = i..j`.
    pub split_scores: SpanMap<Vec<F>>,
    pub outside: SpanMap<Vec<F>>,
    pub outside_score: SpanMap<F>,
}

#[derive(Debug, Clone)]
pub struct Oracle<F> {
    pub layers: Vec<OracleLayer<F>>,
    pub best_tree: BinaryTree,
}

fn add<F: Real>(a: &[F], b: &[F]) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

fn compose_ref<F: Real>(store: &ParamStore<F>, p: &ComposeParams, l: &[F], r: &[F], third: &[F], slot: Slot) -> Vec<F> {
    let rows = vec![
        add(l, store.value(p.role_left).data()),
        add(r, store.value(p.role_right).data()),
        add(third, store.value(p.role_parent).data()),
    ];
    reference::attention_block(store, &p.block, &rows).swap_remove(slot.row())
}

fn phi<F: Real>(store: &ParamStore<F>, ml: &Mlp, mr: &Mlp, x: &[F], y: &[F]) -> F {
    let u = reference::mlp(store, ml, x);
    let v = reference::mlp(store, mr, y);
    let dot: F = u.iter().zip(&v).map(|(&a, &b)| a * b).sum();
    dot / F::c(u.len() as f64).sqrt()
}

fn weighted<F: Real>(w: &[F], rows: &[Vec<F>]) -> Vec<F> {
    let mut out = vec![F::zero(); rows[0].len()];
    for (wi, r) in w.iter().zip(rows) {
        for (o, &x) in out.iter_mut().zip(r) {
            *o += *wi * x;
        }
    }
    out
}

/// Full-chart inside/outside over all layers for the given token embeddings.
pub fn brute_force_oracle<F: Real>(
    store: &ParamStore<F>,
    stack: &CioStack,
    embeddings: &[Vec<F>],
) -> Result<Oracle<F>> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::Input("empty sentence".into()));
    }
    if n > ORACLE_MAX_LEN {
        return Err(Error::OracleCap { n, cap: ORACLE_MAX_LEN });
    }
    let c = &stack.compat;
    let shared = store.value(stack.outside0).data().to_vec();
    let mut layers: Vec<OracleLayer<F>> = Vec::new();
    for l in 0..stack.layers.len() {
        let alpha = stack.inside_params(l);
        let beta = stack.outside_params(l);
        let prev = |s: Span| -> Vec<F> {
            match layers.last() {
                Some(p) => p.outside.get(s).unwrap().clone(),
                None => shared.clone(),
            }
        };
        let mut inside = SpanMap::new(n);
        let mut inside_score = SpanMap::new(n);
        let mut split_scores = SpanMap::new(n);
        for i in 1..=n {
            inside.insert(Span::leaf(i), embeddings[i - 1].clone());
            inside_score.insert(Span::leaf(i), F::zero());
        }
        for w in 2..=n {
            for i in 1..=n + 1 - w {
                let s = Span::new(i, i + w - 1);
                let third = prev(s);
                let mut cands = Vec::new();
                let mut scores = Vec::new();
                for k in s.i..s.j {
                    let (ls, rs) = s.split_at(k);
                    let (el, er) = (inside.get(ls).unwrap(), inside.get(rs).unwrap());
                    cands.push(compose_ref(store, alpha, el, er, &third, Slot::Parent));
                    let abar = phi(store, &c.inside_left, &c.inside_right, el, er);
                    scores.push(abar + *inside_score.get(ls).unwrap() + *inside_score.get(rs).unwrap());
                }
                let wts = softmax_stable(&scores)?;
                inside.insert(s, weighted(&wts, &cands));
                inside_score.insert(s, wts.iter().zip(&scores).map(|(&a, &b)| a * b).sum());
                split_scores.insert(s, scores);
            }
        }
        let mut outside = SpanMap::new(n);
        let mut outside_score = SpanMap::new(n);
        outside.insert(Span::new(1, n), store.value(stack.layers[l].root_outside).data().to_vec());
        outside_score.insert(Span::new(1, n), F::zero());
        for w in (1..n).rev() {
            for i in 1..=n + 1 - w {
                let j = i + w - 1;
                let s = Span::new(i, j);
                let mut cands = Vec::new();
                let mut scores = Vec::new();
                for k in j + 1..=n {
                    let (parent, sib) = (Span::new(i, k), Span::new(j + 1, k));
                    let (ep, bp) = (outside.get(parent).unwrap(), *outside_score.get(parent).unwrap());
                    let es = inside.get(sib).unwrap();
                    cands.push(compose_ref(store, beta, inside.get(s).unwrap(), es, ep, Slot::Left));
                    let bbar = phi(store, &c.outside_left, &c.outside_right, ep, es);
                    scores.push(*inside_score.get(sib).unwrap() + bbar + bp);
                }
                for k in 1..i {
                    let (parent, sib) = (Span::new(k, j), Span::new(k, i - 1));
                    let (ep, bp) = (outside.get(parent).unwrap(), *outside_score.get(parent).unwrap());
                    let es = inside.get(sib).unwrap();
                    cands.push(compose_ref(store, beta, es, inside.get(s).unwrap(), ep, Slot::Right));
                    let bbar = phi(store, &c.outside_left, &c.outside_right, ep, es);
                    scores.push(*inside_score.get(sib).unwrap() + bbar + bp);
                }
                let wts = softmax_stable(&scores)?;
                outside.insert(s, weighted(&wts, &cands));
                outside_score.insert(s, wts.iter().zip(&scores).map(|(&a, &b)| a * b).sum());
            }
        }
        layers.push(OracleLayer { inside, inside_score, split_scores, outside, outside_score });
    }
    let last = layers.last().expect("at least one layer");
    let best_tree = best_tree_exhaustive(n, &last.split_scores)?;
    Ok(Oracle { layers, best_tree })
}

/// All binary trees over `i..=j` as pre-order `(span, split)` lists.
fn enumerate(i: usize, j: usize) -> Vec<Vec<(Span, usize)>> {
    if i == j {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for k in i..j {
        let lefts = enumerate(i, k);
        let rights = enumerate(k + 1, j);
        for lt in &lefts {
            for rt in &rights {
                let mut t = Vec::with_capacity(j - i);
                t.push((Span::new(i, j), k));
                t.extend_from_slice(lt);
                t.extend_from_slice(rt);
                out.push(t);
            }
        }
    }
    out
}

/// Tree whose pre-order sequence of `(a[k], -k)` is lexicographically
/// largest among all binary trees.
pub fn best_tree_exhaustive<F: Real>(n: usize, a: &SpanMap<Vec<F>>) -> Result<BinaryTree> {
    if n > ORACLE_MAX_LEN {
        return Err(Error::OracleCap { n, cap: ORACLE_MAX_LEN });
    }
    let key = |t: &[(Span, usize)]| -> Vec<(F, isize)> {
        t.iter().map(|(s, k)| (a.get(*s).unwrap()[k - s.i], -(*k as isize))).collect()
    };
    let cmp = |x: &[(F, isize)], y: &[(F, isize)]| -> Ordering {
        for (p, q) in x.iter().zip(y) {
            match p.0.partial_cmp(&q.0).unwrap_or(Ordering::Equal).then(p.1.cmp(&q.1)) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    };
    let trees = enumerate(1, n);
    let mut best = 0;
    let mut best_key = key(&trees[0]);
    for (idx, t) in trees.iter().enumerate().skip(1) {
        let k = key(t);
        if cmp(&k, &best_key) == Ordering::Greater {
            best = idx;
            best_key = k;
        }
    }
    let mut splits = SpanMap::new(n);
    for (s, k) in &trees[best] {
        splits.insert(*s, *k);
    }
    BinaryTree::from_splits(n, &splits)
}
