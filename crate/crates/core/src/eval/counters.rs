use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::chart::Schedule;
use crate::cio::Counters;
use crate::tree::BinaryTree;

/// Work an `L`-layer run over `schedule` performs: one inside and one
/// outside compose per (cell, split) pair and layer.
pub fn schedule_counters(schedule: &Schedule, layers: usize) -> Counters {
    let pairs = schedule.split_count();
    Counters {
        inside_composes: pairs * layers,
        outside_composes: pairs * layers,
        inside_steps: schedule.inside_steps() * layers,
        cells: schedule.cell_count() * layers,
    }
}

/// Work of a tree-restricted (fast) run.
pub fn tree_counters(tree: &BinaryTree, layers: usize) -> Counters {
    let internal = tree.len() - 1;
    Counters {
        inside_composes: internal * layers,
        outside_composes: internal * layers,
        inside_steps: tree.height() * layers,
        cells: internal * layers,
    }
}

/// Counters of one sentence together with its wall time.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SentenceCost {
    pub n: usize,
    pub counters: Counters,
    pub wall_ms: f64,
}

/// Aggregate per length bucket.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BucketReport {
    pub bucket: usize,
    pub sentences: usize,
    pub counters: Counters,
    pub wall_ms: f64,
}

/// Groups sentence costs into buckets of the given width (bucket `b` holds
/// lengths `b*width..(b+1)*width`), summing in input order.
pub fn efficiency_report(costs: &[SentenceCost], width: usize) -> Vec<BucketReport> {
    let width = width.max(1);
    let mut buckets: BTreeMap<usize, BucketReport> = BTreeMap::new();
    for c in costs {
        let b = c.n / width;
        let r = buckets.entry(b).or_insert(BucketReport { bucket: b * width, ..Default::default() });
        r.sentences += 1;
        r.counters.add(&c.counters);
        r.wall_ms += c.wall_ms;
    }
    buckets.into_values().collect()
}
