//! Top-down split parser, cell pruning and batch scheduling.

mod loss;
mod order;
mod parser;
mod schedule;

pub use loss::{parser_nll, parser_nll_taped};
pub use order::{apply_nonsplittable, split_order, SplitOrder, SplitScores, SplitStep};
pub use parser::{ParserConfig, ParserModel};
pub use schedule::{build_cell_batches, plan, prune_schedule, prune_trace, MergeStep};
