//! Plain-text corpora: one sentence per line, whitespace-separated tokens.
//! A token starting with `##` continues the previous word, so the split
//! between them is forbidden to the parser.

use std::path::Path;

use recat_core::model::Sentence;

use crate::error::{IoError, IoResult};
use crate::vocab::Vocab;

pub const CONTINUATION: &str = "##";

/// A tokenized line with its ids and word structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub pieces: Vec<String>,
    pub sentence: Sentence,
    /// `true` where a piece starts a new word.
    pub word_start: Vec<bool>,
}

impl Line {
    pub fn parse(text: &str, vocab: &Vocab) -> Self {
        let pieces: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let tokens = pieces.iter().map(|p| vocab.id_or_unk(p)).collect();
        let word_start: Vec<bool> =
            pieces.iter().enumerate().map(|(i, p)| i == 0 || !p.starts_with(CONTINUATION)).collect();
        // split k sits between pieces k and k + 1 (1-based)
        let nonsplittable = (1..pieces.len()).filter(|&k| !word_start[k]).collect();
        Line { pieces, sentence: Sentence { tokens, nonsplittable }, word_start }
    }

    /// Whole words, with continuation pieces glued back on.
    pub fn words(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (p, &start) in self.pieces.iter().zip(&self.word_start) {
            match out.last_mut() {
                Some(w) if !start => w.push_str(p.trim_start_matches(CONTINUATION)),
                _ => out.push(p.clone()),
            }
        }
        out
    }

    pub fn has_pieces(&self) -> bool {
        self.word_start.iter().any(|s| !s)
    }
}

/// Reads non-empty lines.
pub fn parse_corpus(text: &str, vocab: &Vocab) -> Vec<Line> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Line::parse(l, vocab)).collect()
}

pub fn read_corpus(path: &Path, vocab: &Vocab) -> IoResult<Vec<Line>> {
    let lines = parse_corpus(&crate::error::read_to_string(path)?, vocab);
    if lines.is_empty() {
        return Err(IoError::Format(format!("{}: corpus has no sentences", path.display())));
    }
    Ok(lines)
}
