//! Chart-table data structures shared by pruning, inside and outside passes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::Real;
use crate::{Error, Result};

/// Contiguous token range `i..=j`, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub i: usize,
    pub j: usize,
}

impl Span {
    pub const fn new(i: usize, j: usize) -> Self {
        Span { i, j }
    }

    pub const fn leaf(i: usize) -> Self {
        Span { i, j: i }
    }

    pub fn width(&self) -> usize {
        self.j - self.i + 1
    }

    pub fn is_leaf(&self) -> bool {
        self.i == self.j
    }

    /// Children `(i,k)` and `(k+1,j)` of split `k`.
    pub fn split_at(&self, k: usize) -> (Span, Span) {
        (Span::new(self.i, k), Span::new(k + 1, self.j))
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.i <= other.i && other.j <= self.j
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.i >= 1 && self.i <= self.j && self.j <= n {
            Ok(())
        } else {
            Err(Error::Structure(format!("span ({}, {}) outside [1, {n}]", self.i, self.j)))
        }
    }
}

/// Dense map keyed by spans of a sentence of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanMap<T> {
    n: usize,
    slots: Vec<Option<T>>,
}

impl<T> SpanMap<T> {
    pub fn new(n: usize) -> Self {
        let mut slots = Vec::with_capacity(n * n);
        slots.resize_with(n * n, || None);
        SpanMap { n, slots }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn idx(&self, s: Span) -> usize {
        debug_assert!(s.i >= 1 && s.j <= self.n && s.i <= s.j, "{s:?} vs n={}", self.n);
        (s.i - 1) * self.n + (s.j - 1)
    }

    pub fn get(&self, s: Span) -> Option<&T> {
        if s.i == 0 || s.j > self.n || s.i > s.j {
            return None;
        }
        self.slots[self.idx(s)].as_ref()
    }

    pub fn get_mut(&mut self, s: Span) -> Option<&mut T> {
        let i = self.idx(s);
        self.slots[i].as_mut()
    }

    pub fn insert(&mut self, s: Span, v: T) -> Option<T> {
        let i = self.idx(s);
        self.slots[i].replace(v)
    }

    pub fn remove(&mut self, s: Span) -> Option<T> {
        let i = self.idx(s);
        self.slots[i].take()
    }

    pub fn contains(&self, s: Span) -> bool {
        self.get(s).is_some()
    }

    pub fn entry_or_insert_with(&mut self, s: Span, f: impl FnOnce() -> T) -> &mut T {
        let i = self.idx(s);
        self.slots[i].get_or_insert_with(f)
    }

    /// Entries ordered by `(i, j)`.
    pub fn iter(&self) -> impl Iterator<Item = (Span, &T)> {
        let n = self.n;
        self.slots
            .iter()
            .enumerate()
            .filter_map(move |(idx, v)| v.as_ref().map(|v| (Span::new(idx / n + 1, idx % n + 1), v)))
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which child of the parent a span is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    LeftChild,
    RightChild,
}

/// Entry of the parent map `P`: the parent span, its endpoint not shared
/// with the child, and the child's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParentLink {
    pub parent: Span,
    pub endpoint: usize,
    pub side: Side,
}

impl ParentLink {
    /// Split point of the parent that produces the child.
    pub fn split(&self, child: Span) -> usize {
        match self.side {
            Side::LeftChild => child.j,
            Side::RightChild => child.i - 1,
        }
    }

    pub fn sibling(&self, child: Span) -> Span {
        match self.side {
            Side::LeftChild => Span::new(child.j + 1, self.parent.j),
            Side::RightChild => Span::new(self.parent.i, child.i - 1),
        }
    }
}

/// Inverts a split map `K` into the parent map `P`.
///
/// Parents are visited in `(i, j)` order and splits in ascending order, so the
/// result is deterministic.
pub fn parents_from_splits(n: usize, splits: &SpanMap<Vec<usize>>) -> SpanMap<Vec<ParentLink>> {
    let mut parents: SpanMap<Vec<ParentLink>> = SpanMap::new(n);
    for (span, ks) in splits.iter() {
        for &k in ks {
            let (l, r) = span.split_at(k);
            parents.entry_or_insert_with(l, Vec::new).push(ParentLink {
                parent: span,
                endpoint: span.j,
                side: Side::LeftChild,
            });
            parents.entry_or_insert_with(r, Vec::new).push(ParentLink {
                parent: span,
                endpoint: span.i,
                side: Side::RightChild,
            });
        }
    }
    parents
}

/// Encoding plan for one sentence: batches `B`, valid splits `K`, parents `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub n: usize,
    /// `batches[0]` holds the leaves; every later batch only depends on
    /// earlier ones.
    pub batches: Vec<Vec<Span>>,
    pub splits: SpanMap<Vec<usize>>,
    pub parents: SpanMap<Vec<ParentLink>>,
    /// Split points grouped by their height in the parser tree (empty for
    /// unpruned charts).
    pub merge_groups: Vec<Vec<usize>>,
}

impl Schedule {
    /// Builds and validates a schedule from explicit batches and splits.
    pub fn from_parts(
        n: usize,
        batches: Vec<Vec<Span>>,
        splits: SpanMap<Vec<usize>>,
        merge_groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let parents = parents_from_splits(n, &splits);
        let s = Schedule { n, batches, splits, parents, merge_groups };
        s.validate()?;
        Ok(s)
    }

    /// Complete CKY chart: every span, every split, one batch per row.
    pub fn full(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("empty sentence".into()));
        }
        let mut splits = SpanMap::new(n);
        let mut batches = vec![(1..=n).map(Span::leaf).collect::<Vec<_>>()];
        for w in 2..=n {
            let mut row = Vec::new();
            for i in 1..=n + 1 - w {
                let s = Span::new(i, i + w - 1);
                splits.insert(s, (s.i..s.j).collect());
                row.push(s);
            }
            batches.push(row);
        }
        Schedule::from_parts(n, batches, splits, Vec::new())
    }

    pub fn root(&self) -> Span {
        Span::new(1, self.n)
    }

    /// Non-leaf cells in encoding order.
    pub fn cells(&self) -> impl Iterator<Item = Span> + '_ {
        self.batches.iter().skip(1).flatten().copied()
    }

    pub fn cell_count(&self) -> usize {
        self.batches.iter().skip(1).map(Vec::len).sum()
    }

    /// Number of inside steps (non-leaf batches).
    pub fn inside_steps(&self) -> usize {
        self.batches.len().saturating_sub(1)
    }

    /// Total number of (cell, split) pairs.
    pub fn split_count(&self) -> usize {
        self.cells().map(|s| self.splits.get(s).map_or(0, Vec::len)).sum()
    }

    pub fn max_splits(&self) -> usize {
        self.cells().map(|s| self.splits.get(s).map_or(0, Vec::len)).max().unwrap_or(0)
    }

    pub fn splits_of(&self, s: Span) -> &[usize] {
        self.splits.get(s).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parents_of(&self, s: Span) -> &[ParentLink] {
        self.parents.get(s).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks span bounds, split ranges, the topological property of the
    /// batches, and that `P` inverts `K`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::Structure("schedule over empty sentence".into()));
        }
        let leaves: Vec<Span> = (1..=n).map(Span::leaf).collect();
        if self.batches.first() != Some(&leaves) {
            return Err(Error::Structure("first batch must hold exactly the leaves".into()));
        }
        let mut ready: SpanMap<()> = SpanMap::new(n);
        for s in &leaves {
            ready.insert(*s, ());
        }
        for (t, batch) in self.batches.iter().enumerate().skip(1) {
            for s in batch {
                s.check(n)?;
                if s.is_leaf() {
                    return Err(Error::Structure(format!("leaf {s:?} scheduled in batch {t}")));
                }
                let ks = self
                    .splits
                    .get(*s)
                    .filter(|ks| !ks.is_empty())
                    .ok_or_else(|| Error::Structure(format!("cell {s:?} has no valid splits")))?;
                for &k in ks {
                    if k < s.i || k >= s.j {
                        return Err(Error::Structure(format!("split {k} outside {s:?}")));
                    }
                    let (l, r) = s.split_at(k);
                    if !ready.contains(l) || !ready.contains(r) {
                        return Err(Error::Structure(format!(
                            "cell {s:?} in batch {t} needs {l:?}/{r:?} before they are encoded"
                        )));
                    }
                }
            }
            for s in batch {
                if ready.insert(*s, ()).is_some() {
                    return Err(Error::Structure(format!("cell {s:?} scheduled twice")));
                }
            }
        }
        for (s, _) in self.splits.iter() {
            if !ready.contains(s) {
                return Err(Error::Structure(format!("split entry for unscheduled {s:?}")));
            }
        }
        if self.parents != parents_from_splits(n, &self.splits) {
            return Err(Error::Structure("parent map is not the inverse of the split map".into()));
        }
        Ok(())
    }
}

/// One chart cell with materialized values.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell<F> {
    pub span: Span,
    pub inside: Vec<F>,
    pub inside_score: F,
    pub outside: Vec<F>,
    pub outside_score: F,
    pub splits: Vec<usize>,
    /// `a[k]` for each entry of `splits`.
    pub split_scores: Vec<F>,
}

/// Materialized chart table of one CIO layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartLayer<F> {
    pub layer: usize,
    pub cells: SpanMap<Cell<F>>,
    pub root_outside: Vec<F>,
}

/// Allocates a zeroed chart holding every leaf and every scheduled span.
pub fn new_chart<F: Real>(n: usize, schedule: &Schedule, layer: usize, dim: usize) -> Result<ChartLayer<F>> {
    if n == 0 {
        return Err(Error::Input("empty sentence".into()));
    }
    if schedule.n != n {
        return Err(Error::Structure(format!("schedule is for n = {}, chart for n = {n}", schedule.n)));
    }
    let mut cells = SpanMap::new(n);
    for batch in &schedule.batches {
        for &s in batch {
            s.check(n)?;
            let splits = schedule.splits_of(s).to_vec();
            let split_scores = vec![F::zero(); splits.len()];
            cells.insert(
                s,
                Cell {
                    span: s,
                    inside: vec![F::zero(); dim],
                    inside_score: F::zero(),
                    outside: vec![F::zero(); dim],
                    outside_score: F::zero(),
                    splits,
                    split_scores,
                },
            );
        }
    }
    Ok(ChartLayer { layer, cells, root_outside: vec![F::zero(); dim] })
}

impl<F: Real> ChartLayer<F> {
    pub fn cell(&self, s: Span) -> Option<&Cell<F>> {
        self.cells.get(s)
    }
}
