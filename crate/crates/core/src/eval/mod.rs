//! Grammar-induction metrics, efficiency counters and the brute-force oracle.

mod brackets;
mod counters;
mod oracle;

pub use brackets::{collapse_to_words, constituent_recall, corpus_f1, sentence_f1, BracketSet, LabelRecall};
pub use counters::{efficiency_report, schedule_counters, tree_counters, BucketReport, SentenceCost};
pub use oracle::{best_tree_exhaustive, brute_force_oracle, Oracle, OracleLayer, ORACLE_MAX_LEN};
