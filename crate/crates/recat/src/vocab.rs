//! Token vocabularies: a two-column text file of `token id` pairs.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{IoError, IoResult};

pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";

/// Bijective token ↔ id map with dense ids `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from tokens in id order. `[UNK]` and `[MASK]` must
    /// be present.
    pub fn from_tokens(tokens: Vec<String>) -> IoResult<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(IoError::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for special in [UNK, MASK] {
            if !ids.contains_key(special) {
                return Err(IoError::Format(format!("vocabulary lacks {special}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn parse(text: &str) -> IoResult<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(tok), Some(id), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(IoError::Format(format!("vocab line {}: expected `token id`", lineno + 1)));
            };
            let id: usize =
                id.parse().map_err(|_| IoError::Format(format!("vocab line {}: bad id {id:?}", lineno + 1)))?;
            pairs.push((id, tok.to_string()));
        }
        pairs.sort();
        if pairs.iter().enumerate().any(|(i, (id, _))| *id != i) {
            return Err(IoError::Format("vocab ids must be dense and start at 0".into()));
        }
        Self::from_tokens(pairs.into_iter().map(|(_, t)| t).collect())
    }

    pub fn read(path: &Path) -> IoResult<Self> {
        Self::parse(&crate::error::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().enumerate().map(|(i, t)| format!("{t} {i}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, falling back to `[UNK]`.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or_else(|| self.unk_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn unk_id(&self) -> usize {
        self.ids[UNK]
    }

    pub fn mask_id(&self) -> usize {
        self.ids[MASK]
    }
}
