//! Parsing raw text with a trained network and scoring bracketed trees.

use std::collections::BTreeSet;

use recat_core::eval::{collapse_to_words, constituent_recall, corpus_f1, BracketSet, LabelRecall};
use recat_core::model::{EncodeMode, Network};
use recat_core::numerics::Real;
use recat_core::tree::LabeledTree;

use crate::corpus::{Line, CONTINUATION};
use crate::error::{IoError, IoResult};
use crate::run::induce_trees;
use crate::sexpr::{write_binary, UNLABELED};

/// One bracketed tree per line, leaves spelled as in the input.
pub fn parse_lines<F: Real>(net: &Network<F>, lines: &[Line], mode: EncodeMode) -> IoResult<Vec<String>> {
    let sentences: Vec<_> = lines.iter().map(|l| l.sentence.clone()).collect();
    let trees = induce_trees(net, &sentences, mode)?;
    trees.iter().zip(lines).map(|(t, l)| write_binary(t, &l.pieces)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sentences: usize,
    /// Mean sentence F1 in `[0, 100]`.
    pub f1: f64,
    /// Recall for every label found in the gold trees except the unlabeled marker.
    pub recall: Vec<(String, LabelRecall)>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("sentences {}\nf1 {:.2}\n", self.sentences, self.f1);
        for (label, r) in &self.recall {
            out.push_str(&format!("recall {label} {:.2} ({}/{})\n", r.recall, r.found, r.total));
        }
        out
    }
}

/// Brackets of a predicted tree at word level: leaves marked as word-piece
/// continuations are merged into the preceding word first.
fn word_brackets(pred: &LabeledTree) -> IoResult<(BracketSet, Vec<String>)> {
    let leaves = pred.words();
    let pieces = BracketSet::from_labeled(pred);
    let word_start: Vec<bool> =
        leaves.iter().enumerate().map(|(i, w)| i == 0 || !w.starts_with(CONTINUATION)).collect();
    let mut words: Vec<String> = Vec::new();
    for (w, &start) in leaves.iter().zip(&word_start) {
        match words.last_mut() {
            Some(last) if !start => last.push_str(w.trim_start_matches(CONTINUATION)),
            _ => words.push(w.clone()),
        }
    }
    Ok((collapse_to_words(&pieces, &word_start)?, words))
}

/// Mean F1 and per-label recall of `pred` against `gold`, aligned by line.
pub fn evaluate(pred: &[LabeledTree], gold: &[LabeledTree]) -> IoResult<EvalReport> {
    if pred.len() != gold.len() {
        return Err(IoError::Format(format!("{} predicted trees for {} gold trees", pred.len(), gold.len())));
    }
    let mut pairs = Vec::with_capacity(pred.len());
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        let (brackets, words) = word_brackets(p)?;
        if words != g.words() {
            return Err(IoError::Format(format!("tree {}: predicted and gold words differ", i + 1)));
        }
        pairs.push((brackets, BracketSet::from_labeled(g)));
    }
    let f1 = corpus_f1(&pairs)?;
    let labels: BTreeSet<String> = gold
        .iter()
        .flat_map(|g| g.labeled_spans())
        .filter(|(l, s)| l != UNLABELED && s.width() >= 2)
        .map(|(l, _)| l)
        .collect();
    let preds: Vec<BracketSet> = pairs.into_iter().map(|(p, _)| p).collect();
    let recall =
        labels.into_iter().map(|l| Ok((l.clone(), constituent_recall(&preds, gold, &l)?))).collect::<IoResult<_>>()?;
    Ok(EvalReport { sentences: pred.len(), f1, recall })
}
