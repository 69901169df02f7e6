//! Efficiency counters over balanced synthetic inputs: cells, inside steps
//! and compose calls of the pruned chart versus fast tree encoding.

use std::time::Instant;

use rayon::prelude::*;
use recat_core::eval::{schedule_counters, tree_counters};
use recat_core::model::{EncodeMode, Masked, Network, Plan, ReCatConfig, Sentence};
use recat_core::pruner::{plan, split_order, SplitOrder, SplitScores};
use recat_core::tree::BinaryTree;

use crate::error::{IoError, IoResult};

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    /// Non-leaf cells of the pruned chart, per layer.
    pub cells: usize,
    /// `2·m·n`.
    pub cell_bound: usize,
    /// Inside batches of the pruned chart, per layer.
    pub inside_steps: usize,
    /// `(m − 1) + 2·⌈log2 n⌉`.
    pub step_bound: usize,
    pub composes_pruned: usize,
    pub composes_fast: usize,
    pub wall_ms_pruned: f64,
    pub wall_ms_fast: f64,
}

pub const CSV_HEADER: &str =
    "n,m,cells,cell_bound,inside_steps,step_bound,composes_pruned,composes_fast,wall_ms_pruned,wall_ms_fast";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3},{:.3}",
            self.n,
            self.m,
            self.cells,
            self.cell_bound,
            self.inside_steps,
            self.step_bound,
            self.composes_pruned,
            self.composes_fast,
            self.wall_ms_pruned,
            self.wall_ms_fast
        )
    }
}

/// Parses `a..b` (powers of two from `a` up to `b`) or a comma list.
pub fn parse_lengths(spec: &str) -> IoResult<Vec<usize>> {
    let bad = || IoError::Format(format!("bad length list {spec:?} (expected e.g. 8..256 or 8,12,16)"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let out: Vec<usize> = match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if a == 0 || a > b {
                return Err(bad());
            }
            std::iter::successors(Some(a), |&x| x.checked_mul(2)).take_while(|&x| x <= b).collect()
        }
        None => spec.split(',').map(num).collect::<IoResult<_>>()?,
    };
    if out.is_empty() || out.contains(&0) {
        return Err(bad());
    }
    Ok(out)
}

/// Split scores whose greedy top-down order reproduces `tree`.
pub fn scores_for_tree(tree: &BinaryTree) -> IoResult<SplitScores<f32>> {
    let heights = SplitOrder::from_tree(tree).heights()?;
    let v = heights.iter().enumerate().map(|(k, &h)| h as f32 - k as f32 * 1e-4).collect();
    Ok(SplitScores::new(v))
}

/// Counters and timings for each length. The model only affects timing.
pub fn bench(lengths: &[usize], m: usize, model: &ReCatConfig, seed: u64) -> IoResult<Vec<BenchRow>> {
    let max = lengths.iter().copied().max().unwrap_or(1);
    let config = ReCatConfig { prune_m: m, max_len: model.max_len.max(max), ..model.clone() };
    let net = Network::<f32>::new(config, seed)?;
    let layers = net.config.cio_layers;
    lengths
        .par_iter()
        .map(|&n| {
            let tree = BinaryTree::balanced(n)?;
            let scores = scores_for_tree(&tree)?;
            let order = split_order(&scores);
            let schedule = plan(n, m, &order)?;
            let pruned = schedule_counters(&schedule, layers);
            let fast = tree_counters(&tree, layers);
            let sentence = Sentence::new((0..n).map(|i| 2 + i % (net.config.vocab - 2)).collect());
            let masked = Masked::unmasked(&sentence.tokens);
            let time = |mode: EncodeMode| -> IoResult<f64> {
                let p = Plan {
                    scores: scores.clone(),
                    order: order.clone(),
                    schedule: (mode == EncodeMode::Pruned).then(|| schedule.clone()),
                };
                let start = Instant::now();
                net.forward_with_plan(&sentence, &masked, &p)?;
                Ok(start.elapsed().as_secs_f64() * 1e3)
            };
            Ok(BenchRow {
                n,
                m,
                cells: schedule.cell_count(),
                cell_bound: 2 * m * n,
                inside_steps: schedule.inside_steps(),
                step_bound: (m - 1) + 2 * (n as f64).log2().ceil() as usize,
                composes_pruned: pruned.composes(),
                composes_fast: fast.composes(),
                wall_ms_pruned: time(EncodeMode::Pruned)?,
                wall_ms_fast: time(EncodeMode::Fast)?,
            })
        })
        .collect()
}
