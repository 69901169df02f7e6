//! Bracketed s-expression trees, one per line: `(X (X w1 w2) w3)`.
//!
//! Binary predictions are written with label `X` and bare words as leaves; a
//! one-token sentence is written `(w1)`. Gold files may carry real labels and
//! any arity, with preterminals such as `(NN dog)`.

use recat_core::tree::{BinaryTree, LabeledTree};

use crate::error::{IoError, IoResult};

/// Label used for unlabeled nodes.
pub const UNLABELED: &str = "X";

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn lex(text: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let delim = c == '(' || c == ')' || c.is_whitespace();
        if delim {
            if let Some(s) = start.take() {
                out.push(Tok::Atom(&text[s..i]));
            }
            match c {
                '(' => out.push(Tok::Open),
                ')' => out.push(Tok::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Tok::Atom(&text[s..]));
    }
    out
}

/// Parses one tree.
pub fn parse_tree(text: &str) -> IoResult<LabeledTree> {
    let toks = lex(text);
    let mut pos = 0;
    let tree = parse_node(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(IoError::Format(format!("trailing input after tree: {text:?}")));
    }
    Ok(tree)
}

fn parse_node(toks: &[Tok<'_>], pos: &mut usize) -> IoResult<LabeledTree> {
    match toks.get(*pos) {
        Some(Tok::Atom(w)) => {
            *pos += 1;
            Ok(LabeledTree::Word(w.to_string()))
        }
        Some(Tok::Open) => {
            *pos += 1;
            let label = match toks.get(*pos) {
                Some(Tok::Atom(a)) => {
                    *pos += 1;
                    a.to_string()
                }
                _ => return Err(IoError::Format("expected a label after '('".into())),
            };
            let mut children = Vec::new();
            loop {
                match toks.get(*pos) {
                    Some(Tok::Close) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_node(toks, pos)?),
                    None => return Err(IoError::Format("unbalanced parentheses".into())),
                }
            }
            if children.is_empty() {
                // `(w)`: a bare one-word sentence
                return Ok(LabeledTree::Word(label));
            }
            Ok(LabeledTree::Node { label, children })
        }
        Some(Tok::Close) => Err(IoError::Format("unexpected ')'".into())),
        None => Err(IoError::Format("empty tree".into())),
    }
}

/// Parses every non-empty line.
pub fn parse_trees(text: &str) -> IoResult<Vec<LabeledTree>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_tree(l).map_err(|e| IoError::Format(format!("tree line {}: {e}", i + 1))))
        .collect()
}

fn escape(word: &str) -> String {
    word.replace('(', "-LRB-").replace(')', "-RRB-")
}

/// Writes a labeled tree in the same syntax.
pub fn write_labeled(tree: &LabeledTree) -> String {
    match tree {
        LabeledTree::Word(w) => escape(w),
        LabeledTree::Node { label, children } => {
            let inner: Vec<String> = children.iter().map(write_labeled).collect();
            format!("({label} {})", inner.join(" "))
        }
    }
}

/// Writes a binary tree over `words` with unlabeled nodes.
pub fn write_binary(tree: &BinaryTree, words: &[String]) -> IoResult<String> {
    if words.len() != tree.len() {
        return Err(IoError::Format(format!("tree over {} tokens, {} words given", tree.len(), words.len())));
    }
    if words.len() == 1 {
        return Ok(format!("({})", escape(&words[0])));
    }
    fn go(tree: &BinaryTree, id: usize, words: &[String], out: &mut String) {
        let node = tree.node(id);
        match node.children {
            None => out.push_str(&escape(&words[node.span.i - 1])),
            Some((l, r)) => {
                out.push('(');
                out.push_str(UNLABELED);
                out.push(' ');
                go(tree, l, words, out);
                out.push(' ');
                go(tree, r, words, out);
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    go(tree, tree.root(), words, &mut out);
    Ok(out)
}
