//! A fixed bracketed toy grammar used for training-trend checks and demos.
//!
//! Twenty phrase rules over five phrase labels expand into 48 word types
//! grouped in ten disjoint lexical classes. Ids 0 and 1 are reserved for the
//! unknown and mask tokens, so the vocabulary has 50 entries.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recat_core::tree::LabeledTree;

use crate::config::RunConfig;
use crate::vocab::{Vocab, MASK, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sym {
    S,
    Np,
    Vp,
    Pp,
    Ap,
    Det,
    Noun,
    Verb,
    Intrans,
    Adj,
    Prep,
    Adv,
    Pron,
    Conj,
    Aux,
}

use Sym::*;

/// `(lhs, rhs, weight)`; weights are relative within one left-hand side.
const RULES: [(Sym, &[Sym], u32); 20] = [
    (S, &[Np, Vp], 10),
    (S, &[S, Conj, S], 1),
    (S, &[Pp, Np, Vp], 2),
    (Np, &[Det, Noun], 8),
    (Np, &[Det, Ap, Noun], 4),
    (Np, &[Np, Pp], 2),
    (Np, &[Pron], 3),
    (Np, &[Det, Noun, Noun], 1),
    (Np, &[Np, Conj, Np], 1),
    (Vp, &[Verb, Np], 7),
    (Vp, &[Verb, Np, Pp], 3),
    (Vp, &[Intrans], 3),
    (Vp, &[Intrans, Pp], 3),
    (Vp, &[Aux, Vp], 2),
    (Vp, &[Vp, Adv], 2),
    (Vp, &[Verb, Np, Np], 1),
    (Pp, &[Prep, Np], 1),
    (Ap, &[Adj], 4),
    (Ap, &[Adv, Adj], 2),
    (Ap, &[Adj, Ap], 1),
];

const LEXICON: [(Sym, &[&str]); 10] = [
    (Det, &["the", "a", "this", "every"]),
    (Noun, &["dog", "cat", "bird", "house", "tree", "river", "child", "book", "city", "song"]),
    (Verb, &["sees", "likes", "finds", "takes", "builds", "reads", "hears", "gives"]),
    (Intrans, &["sleeps", "runs", "sings", "waits"]),
    (Adj, &["big", "small", "red", "old", "quiet", "happy"]),
    (Prep, &["in", "on", "near", "with", "under"]),
    (Adv, &["very", "often", "quickly", "never"]),
    (Pron, &["she", "he", "they"]),
    (Conj, &["and", "but"]),
    (Aux, &["will", "can"]),
];

fn label(sym: Sym) -> &'static str {
    match sym {
        S => "S",
        Np => "NP",
        Vp => "VP",
        Pp => "PP",
        Ap => "ADJP",
        Det => "DT",
        Noun => "NN",
        Verb => "VBZ",
        Intrans => "VBI",
        Adj => "JJ",
        Prep => "IN",
        Adv => "RB",
        Pron => "PRP",
        Conj => "CC",
        Aux => "MD",
    }
}

/// Number of phrase rules in the grammar.
pub const RULE_COUNT: usize = RULES.len();

/// Vocabulary of the toy grammar: `[UNK]`, `[MASK]`, then the lexicon.
pub fn vocab() -> Vocab {
    let mut tokens = vec![UNK.to_string(), MASK.to_string()];
    for (_, words) in LEXICON {
        tokens.extend(words.iter().map(|w| w.to_string()));
    }
    Vocab::from_tokens(tokens).expect("lexicon words are distinct")
}

/// Samples a labeled tree; expansions deeper than `max_depth` fall back to
/// the first (non-recursive) rule of their category.
fn expand<R: Rng>(sym: Sym, depth: usize, max_depth: usize, rng: &mut R) -> LabeledTree {
    if let Some((_, words)) = LEXICON.iter().find(|(s, _)| *s == sym) {
        let w = words[rng.gen_range(0..words.len())];
        return LabeledTree::Node { label: label(sym).into(), children: vec![LabeledTree::Word(w.into())] };
    }
    let options: Vec<&(Sym, &[Sym], u32)> = RULES.iter().filter(|(lhs, _, _)| *lhs == sym).collect();
    let rhs = if depth >= max_depth {
        options[0].1
    } else {
        let total: u32 = options.iter().map(|r| r.2).sum();
        let mut pick = rng.gen_range(0..total);
        let mut chosen = options[0].1;
        for r in &options {
            if pick < r.2 {
                chosen = r.1;
                break;
            }
            pick -= r.2;
        }
        chosen
    };
    let children = rhs.iter().map(|&s| expand(s, depth + 1, max_depth, rng)).collect();
    LabeledTree::Node { label: label(sym).into(), children }
}

/// `count` gold trees with sentence lengths in `min_len..=max_len`,
/// deterministic in `seed`.
pub fn generate(count: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<LabeledTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let t = expand(S, 0, 6, &mut rng);
        let n = t.words().len();
        if (min_len..=max_len).contains(&n) {
            out.push(t);
        }
    }
    out
}

/// Model and optimizer settings for pretraining on the toy grammar.
pub fn run_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.model.vocab = vocab().len();
    c.model.mask_id = vocab().mask_id();
    c.model.mask_rate = 0.3;
    c.train.lr_model = 3e-3;
    c.train.lr_parser = 1e-4;
    c.train.batch_tokens = 64;
    c.train.warmup_steps = 100;
    c.train.decay_steps = 1450;
    c
}
