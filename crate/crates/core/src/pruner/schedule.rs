use alloc::format;
use alloc::vec::Vec;

use super::SplitOrder;
use crate::chart::{Schedule, Span, SpanMap};
use crate::{Error, Result};

/// Record of one merge during pruning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeStep {
    /// Index of the height group the merge belongs to.
    pub group: usize,
    pub split: usize,
    /// Cells that descended to the height threshold and were appended.
    pub appended: Vec<Span>,
}

/// Pruned encoding plan before batching: the first rows of the chart, then
/// the cells appended after each merge, in the order they were produced.
pub fn prune_schedule(n: usize, m: usize, order: &SplitOrder) -> Result<Schedule> {
    prune_trace(n, m, order).map(|(s, _)| s)
}

/// [`prune_schedule`] plus the per-merge trace.
///
/// The frontier is a sequence of atoms (merged spans); a cell's height is its
/// atom count minus one. All cells of height `1..=m` are encoded up front.
/// Merge groups (split points of equal tree height, ascending) are then
/// applied one merge at a time in merge order; after each merge the cells of
/// height `<= m` over the new frontier that are not yet encoded are appended,
/// with valid splits at the atom boundaries they contain.
pub fn prune_trace(n: usize, m: usize, order: &SplitOrder) -> Result<(Schedule, Vec<MergeStep>)> {
    if n == 0 {
        return Err(Error::Input("empty sentence".into()));
    }
    if m < 2 {
        return Err(Error::Config(format!("pruning threshold m = {m} must be at least 2")));
    }
    if order.n != n {
        return Err(Error::Structure(format!("split order for n = {}, sentence has n = {n}", order.n)));
    }
    let groups = order.merge_groups()?;
    let mut splits: SpanMap<Vec<usize>> = SpanMap::new(n);
    let mut batches: Vec<Vec<Span>> = Vec::new();
    batches.push((1..=n).map(Span::leaf).collect());
    for h in 1..=m.min(n - 1) {
        let row: Vec<Span> = (1..=n - h).map(|i| Span::new(i, i + h)).collect();
        for s in &row {
            splits.insert(*s, (s.i..s.j).collect());
        }
        batches.push(row);
    }
    let mut trace = Vec::new();
    if n - 1 > m {
        let mut atoms: Vec<Span> = (1..=n).map(Span::leaf).collect();
        for (g, group) in groups.iter().enumerate() {
            for &p in group {
                let x = atoms
                    .iter()
                    .position(|a| a.j == p)
                    .filter(|&x| x + 1 < atoms.len())
                    .ok_or_else(|| Error::Structure(format!("split {p} is not an atom boundary")))?;
                atoms[x] = Span::new(atoms[x].i, atoms[x + 1].j);
                atoms.remove(x + 1);
                let mut appended = Vec::new();
                for h in 1..=m {
                    if atoms.len() <= h {
                        break;
                    }
                    let lo = x.saturating_sub(h);
                    let hi = x.min(atoms.len() - 1 - h);
                    for start in lo..=hi {
                        let s = Span::new(atoms[start].i, atoms[start + h].j);
                        if !splits.contains(s) {
                            splits.insert(s, (start..start + h).map(|y| atoms[y].j).collect());
                            appended.push(s);
                        }
                    }
                }
                if !appended.is_empty() {
                    batches.push(appended.clone());
                }
                trace.push(MergeStep { group: g, split: p, appended });
            }
        }
    }
    let schedule = Schedule::from_parts(n, batches, splits, groups)?;
    Ok((schedule, trace))
}

/// Level-synchronous batching: drops every cell the root does not depend on
/// (dropping cascades, so the kept set is exactly what the root reaches
/// through valid splits) and places each kept cell in the first batch after
/// all sub-spans of all its splits.
pub fn build_cell_batches(schedule: &Schedule) -> Result<Schedule> {
    let n = schedule.n;
    let root = schedule.root();
    let mut needed: SpanMap<()> = SpanMap::new(n);
    if !root.is_leaf() {
        let mut stack = alloc::vec![root];
        while let Some(s) = stack.pop() {
            if s.is_leaf() || needed.contains(s) {
                continue;
            }
            let ks = schedule
                .splits
                .get(s)
                .ok_or_else(|| Error::Structure(format!("cell {s:?} is needed but has no split entry")))?;
            needed.insert(s, ());
            for &k in ks {
                let (l, r) = s.split_at(k);
                stack.push(l);
                stack.push(r);
            }
        }
    }
    let mut level: SpanMap<usize> = SpanMap::new(n);
    for i in 1..=n {
        level.insert(Span::leaf(i), 0);
    }
    let mut batches: Vec<Vec<Span>> = alloc::vec![(1..=n).map(Span::leaf).collect()];
    let mut splits = SpanMap::new(n);
    for s in schedule.cells() {
        if !needed.contains(s) {
            continue;
        }
        let mut lv = 0;
        for &k in schedule.splits_of(s) {
            let (l, r) = s.split_at(k);
            for c in [l, r] {
                let cl = level
                    .get(c)
                    .copied()
                    .ok_or_else(|| Error::ScheduleViolation(format!("dependency of {s:?} on {c:?} is not ordered")))?;
                lv = lv.max(cl);
            }
        }
        let lv = lv + 1;
        level.insert(s, lv);
        if batches.len() <= lv {
            batches.resize_with(lv + 1, Vec::new);
        }
        batches[lv].push(s);
        splits.insert(s, schedule.splits_of(s).to_vec());
    }
    Schedule::from_parts(n, batches, splits, schedule.merge_groups.clone())
}

/// Pruned and batched schedule for a split order.
pub fn plan(n: usize, m: usize, order: &SplitOrder) -> Result<Schedule> {
    build_cell_batches(&prune_schedule(n, m, order)?)
}
