use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use crate::chart::Span;
use crate::tree::{BinaryTree, LabeledTree};
use crate::{Error, Result};

/// Spans of width ≥ 2 taken from a tree over `n` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketSet {
    pub n: usize,
    pub spans: BTreeSet<Span>,
}

impl BracketSet {
    pub fn new(n: usize, spans: impl IntoIterator<Item = Span>) -> Result<Self> {
        let mut out = BTreeSet::new();
        for s in spans {
            s.check(n)?;
            if s.width() >= 2 {
                out.insert(s);
            }
        }
        Ok(BracketSet { n, spans: out })
    }

    pub fn from_binary(tree: &BinaryTree) -> Self {
        let spans = tree.nodes().iter().map(|nd| nd.span).filter(|s| s.width() >= 2).collect();
        BracketSet { n: tree.len(), spans }
    }

    pub fn from_labeled(tree: &LabeledTree) -> Self {
        let n = tree.words().len();
        let spans = tree.labeled_spans().into_iter().map(|(_, s)| s).filter(|s| s.width() >= 2).collect();
        BracketSet { n, spans }
    }

    /// Brackets that count for F1: everything except the full sentence.
    pub fn nontrivial(&self) -> BTreeSet<Span> {
        let full = Span::new(1, self.n);
        self.spans.iter().copied().filter(|s| *s != full).collect()
    }

    pub fn contains(&self, s: Span) -> bool {
        self.spans.contains(&s)
    }
}

/// Sentence F1 in `[0, 100]` over non-trivial brackets. Two empty sets agree
/// vacuously (100); exactly one empty set scores 0.
pub fn sentence_f1(pred: &BracketSet, gold: &BracketSet) -> Result<f64> {
    if pred.n != gold.n {
        return Err(Error::Input(format!("prediction over {} tokens, gold over {}", pred.n, gold.n)));
    }
    let p = pred.nontrivial();
    let g = gold.nontrivial();
    if p.is_empty() && g.is_empty() {
        return Ok(100.0);
    }
    if p.is_empty() || g.is_empty() {
        return Ok(0.0);
    }
    let overlap = p.intersection(&g).count() as f64;
    if overlap == 0.0 {
        return Ok(0.0);
    }
    let precision = overlap / p.len() as f64;
    let recall = overlap / g.len() as f64;
    Ok(100.0 * 2.0 * precision * recall / (precision + recall))
}

/// Mean sentence F1 over paired prediction/gold sets.
pub fn corpus_f1(pairs: &[(BracketSet, BracketSet)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Input("no sentences to score".into()));
    }
    let mut total = 0.0;
    for (p, g) in pairs {
        total += sentence_f1(p, g)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Recall of labeled gold constituents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRecall {
    /// Percentage; 0 when no gold span carries the label.
    pub recall: f64,
    pub found: usize,
    pub total: usize,
}

impl LabelRecall {
    /// True when the label never occurs in the gold trees.
    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

/// Fraction of gold spans (width ≥ 2) labeled `label` that appear in the
/// predicted bracket sets.
pub fn constituent_recall(preds: &[BracketSet], golds: &[LabeledTree], label: &str) -> Result<LabelRecall> {
    if preds.len() != golds.len() {
        return Err(Error::Input(format!("{} predictions for {} gold trees", preds.len(), golds.len())));
    }
    let (mut found, mut total) = (0, 0);
    for (p, g) in preds.iter().zip(golds) {
        for (l, s) in g.labeled_spans() {
            if l == label && s.width() >= 2 {
                total += 1;
                if p.contains(s) {
                    found += 1;
                }
            }
        }
    }
    let recall = if total == 0 { 0.0 } else { 100.0 * found as f64 / total as f64 };
    Ok(LabelRecall { recall, found, total })
}

/// Maps word-piece spans to word spans. `word_start[p]` tells whether piece
/// `p + 1` starts a word. Spans that do not align with word boundaries are
/// dropped; spans inside one word collapse to width 1 and vanish.
pub fn collapse_to_words(pieces: &BracketSet, word_start: &[bool]) -> Result<BracketSet> {
    if word_start.len() != pieces.n {
        return Err(Error::Input(format!("{} boundary flags for {} pieces", word_start.len(), pieces.n)));
    }
    if pieces.n > 0 && !word_start[0] {
        return Err(Error::Input("first piece must start a word".into()));
    }
    let mut word_of = Vec::with_capacity(pieces.n);
    let mut w = 0;
    for &start in word_start {
        if start {
            w += 1;
        }
        word_of.push(w);
    }
    let ends_word = |p: usize| p == pieces.n || word_start[p];
    let spans = pieces
        .spans
        .iter()
        .filter(|s| word_start[s.i - 1] && ends_word(s.j))
        .map(|s| Span::new(word_of[s.i - 1], word_of[s.j - 1]));
    BracketSet::new(w, spans)
}
