//! Binary constituency trees over token positions and labeled n-ary trees.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::chart::{Span, SpanMap};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeNode {
    pub span: Span,
    /// Left and right child node ids, `None` for leaves.
    pub children: Option<(usize, usize)>,
}

/// Full binary tree whose leaves are the tokens `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTree {
    n: usize,
    nodes: Vec<TreeNode>,
    root: usize,
}

impl BinaryTree {
    /// Builds the tree top-down, asking `split` for the split point of every
    /// non-leaf span.
    pub fn from_split_fn(n: usize, mut split: impl FnMut(Span) -> Result<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Input("empty sentence".into()));
        }
        let mut nodes = Vec::with_capacity(2 * n - 1);
        nodes.push(TreeNode { span: Span::new(1, n), children: None });
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let span = nodes[id].span;
            if span.is_leaf() {
                continue;
            }
            let k = split(span)?;
            if k < span.i || k >= span.j {
                return Err(Error::Structure(format!("split {k} outside {span:?}")));
            }
            let (l, r) = span.split_at(k);
            let li = nodes.len();
            nodes.push(TreeNode { span: l, children: None });
            nodes.push(TreeNode { span: r, children: None });
            nodes[id].children = Some((li, li + 1));
            stack.push(li + 1);
            stack.push(li);
        }
        Ok(BinaryTree { n, nodes, root: 0 })
    }

    pub fn from_splits(n: usize, splits: &SpanMap<usize>) -> Result<Self> {
        Self::from_split_fn(n, |s| {
            splits.get(s).copied().ok_or_else(|| Error::Structure(format!("no split for {s:?}")))
        })
    }

    pub fn right_branching(n: usize) -> Result<Self> {
        Self::from_split_fn(n, |s| Ok(s.i))
    }

    pub fn left_branching(n: usize) -> Result<Self> {
        Self::from_split_fn(n, |s| Ok(s.j - 1))
    }

    /// Splits every span at its midpoint (left half gets the extra token).
    pub fn balanced(n: usize) -> Result<Self> {
        Self::from_split_fn(n, |s| Ok(s.i + (s.width() - 1) / 2))
    }

    /// Top-down tree with a uniformly drawn split point at every span.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        Self::from_split_fn(n, |s| Ok(rng.gen_range(s.i..s.j)))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Node ids in in-order (left subtree, node, right subtree); `2n - 1`
    /// entries with terminals at even positions.
    pub fn in_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = Vec::new();
        let mut cur = Some(self.root);
        while cur.is_some() || !stack.is_empty() {
            while let Some(c) = cur {
                stack.push(c);
                cur = self.nodes[c].children.map(|(l, _)| l);
            }
            let c = stack.pop().unwrap();
            out.push(c);
            cur = self.nodes[c].children.map(|(_, r)| r);
        }
        out
    }

    /// Node ids with every parent before its children.
    pub fn pre_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(c) = stack.pop() {
            out.push(c);
            if let Some((l, r)) = self.nodes[c].children {
                stack.push(r);
                stack.push(l);
            }
        }
        out
    }

    /// Node ids with every child before its parent.
    pub fn post_order(&self) -> Vec<usize> {
        let mut out = self.pre_order();
        out.reverse();
        out
    }

    /// Split point of every non-leaf node.
    pub fn splits(&self) -> SpanMap<usize> {
        let mut m = SpanMap::new(self.n);
        for node in &self.nodes {
            if let Some((l, _)) = node.children {
                m.insert(node.span, self.nodes[l].span.j);
            }
        }
        m
    }

    /// Spans of the non-leaf nodes in pre-order.
    pub fn internal_spans(&self) -> Vec<Span> {
        self.pre_order().into_iter().map(|id| self.nodes[id]).filter(|n| n.children.is_some()).map(|n| n.span).collect()
    }

    pub fn height(&self) -> usize {
        let mut h = vec![0usize; self.nodes.len()];
        for id in self.post_order() {
            if let Some((l, r)) = self.nodes[id].children {
                h[id] = 1 + h[l].max(h[r]);
            }
        }
        h[self.root]
    }

    /// Labeled view with every internal node labeled `label`.
    pub fn to_labeled(&self, words: &[String], label: &str) -> Result<LabeledTree> {
        if words.len() != self.n {
            return Err(Error::Input(format!("{} words for a tree over {} tokens", words.len(), self.n)));
        }
        fn build(t: &BinaryTree, id: usize, words: &[String], label: &str) -> LabeledTree {
            let node = t.nodes[id];
            match node.children {
                None => LabeledTree::Word(words[node.span.i - 1].clone()),
                Some((l, r)) => LabeledTree::Node {
                    label: label.into(),
                    children: vec![build(t, l, words, label), build(t, r, words, label)],
                },
            }
        }
        Ok(build(self, self.root, words, label))
    }
}

/// Labeled constituency tree with arbitrary arity; words are the leaves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabeledTree {
    Word(String),
    Node { label: String, children: Vec<LabeledTree> },
}

impl LabeledTree {
    pub fn words(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words(&self, out: &mut Vec<String>) {
        match self {
            LabeledTree::Word(w) => out.push(w.clone()),
            LabeledTree::Node { children, .. } => children.iter().for_each(|c| c.collect_words(out)),
        }
    }

    /// `(label, span)` of every labeled node, preterminals included, in
    /// pre-order.
    pub fn labeled_spans(&self) -> Vec<(String, Span)> {
        let mut out = Vec::new();
        self.collect_spans(1, &mut out);
        out
    }

    fn collect_spans(&self, start: usize, out: &mut Vec<(String, Span)>) -> usize {
        match self {
            LabeledTree::Word(_) => 1,
            LabeledTree::Node { label, children } => {
                let slot = out.len();
                out.push((label.clone(), Span::new(start, start)));
                let mut width = 0;
                for c in children {
                    width += c.collect_spans(start + width, out);
                }
                out[slot].1 = Span::new(start, start + width.max(1) - 1);
                width
            }
        }
    }
}
