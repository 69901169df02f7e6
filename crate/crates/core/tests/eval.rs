mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recat_core::chart::Span;
use recat_core::eval::{
    best_tree_exhaustive, brute_force_oracle, collapse_to_words, constituent_recall, corpus_f1, efficiency_report,
    schedule_counters, sentence_f1, tree_counters, BracketSet, SentenceCost, ORACLE_MAX_LEN,
};
use recat_core::pruner::{plan, SplitOrder};
use recat_core::tree::{BinaryTree, LabeledTree};
use recat_core::Error;

fn word(w: &str) -> LabeledTree {
    LabeledTree::Word(w.into())
}

fn node(label: &str, children: Vec<LabeledTree>) -> LabeledTree {
    LabeledTree::Node { label: label.into(), children }
}

/// (S (NP a b) (VP c (NP d e)))
fn gold() -> LabeledTree {
    node(
        "S",
        vec![
            node("NP", vec![word("a"), word("b")]),
            node("VP", vec![word("c"), node("NP", vec![word("d"), word("e")])]),
        ],
    )
}

fn spans(n: usize, s: &[(usize, usize)]) -> BracketSet {
    BracketSet::new(n, s.iter().map(|&(i, j)| Span::new(i, j))).unwrap()
}

#[test]
fn identical_trees_score_one_hundred() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    for n in 3..20 {
        let t = BinaryTree::random(n, &mut r).unwrap();
        let b = BracketSet::from_binary(&t);
        assert_eq!(sentence_f1(&b, &b).unwrap(), 100.0);
    }
}

#[test]
fn hand_computed_f1() {
    let g = BracketSet::from_labeled(&gold());
    assert_eq!(g.nontrivial().len(), 3);
    // right-branching over five words: (2,5) (3,5) (4,5) → matches (3,5) and (4,5)
    let rb = BracketSet::from_binary(&BinaryTree::right_branching(5).unwrap());
    let f = sentence_f1(&rb, &g).unwrap();
    assert!((f - 200.0 / 3.0).abs() < 1e-9, "{f}");
    let lb = BracketSet::from_binary(&BinaryTree::left_branching(5).unwrap());
    // (1,2) (1,3) (1,4): one hit out of three on each side
    assert!((sentence_f1(&lb, &g).unwrap() - 100.0 / 3.0).abs() < 1e-9);
    assert!((corpus_f1(&[(rb, g.clone()), (lb, g)]).unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn degenerate_bracket_sets() {
    let empty = spans(2, &[(1, 2)]);
    assert_eq!(sentence_f1(&empty, &empty).unwrap(), 100.0);
    assert_eq!(sentence_f1(&spans(4, &[(1, 4)]), &spans(4, &[(1, 4), (1, 2)])).unwrap(), 0.0);
    assert!(matches!(sentence_f1(&spans(3, &[]), &spans(4, &[])), Err(Error::Input(_))));
    assert!(matches!(corpus_f1(&[]), Err(Error::Input(_))));
    assert!(BracketSet::new(3, [Span::new(2, 4)]).is_err());
}

#[test]
fn recall_per_label() {
    let golds = vec![gold()];
    let pred = spans(5, &[(1, 2), (3, 5), (1, 5)]);
    let np = constituent_recall(&[pred.clone()], &golds, "NP").unwrap();
    assert_eq!((np.found, np.total), (1, 2));
    assert_eq!(np.recall, 50.0);
    let vp = constituent_recall(&[pred.clone()], &golds, "VP").unwrap();
    assert_eq!(vp.recall, 100.0);
    let pp = constituent_recall(&[pred], &golds, "PP").unwrap();
    assert!(pp.is_empty());
    assert_eq!(pp.recall, 0.0);
}

#[test]
fn word_piece_spans_collapse_to_words() {
    // pieces: un ##do ##ne it | words: undone it
    let pieces = spans(4, &[(1, 2), (1, 3), (1, 4), (3, 4)]);
    let words = collapse_to_words(&pieces, &[true, false, false, true]).unwrap();
    assert_eq!(words, spans(2, &[(1, 2)]));
    assert!(collapse_to_words(&pieces, &[false, true, true, true]).is_err());
    assert!(collapse_to_words(&pieces, &[true, true]).is_err());
    let plain = spans(4, &[(1, 2), (1, 4)]);
    assert_eq!(collapse_to_words(&plain, &[true; 4]).unwrap(), plain);
}

#[test]
fn oracle_refuses_long_sentences() {
    let (store, st) = stack(0, config(8, 1, false));
    let emb = embeddings(0, ORACLE_MAX_LEN + 1, 8);
    assert!(matches!(
        brute_force_oracle(&store, &st, &emb),
        Err(Error::OracleCap { n, cap }) if n == ORACLE_MAX_LEN + 1 && cap == ORACLE_MAX_LEN
    ));
}

#[test]
fn oracle_best_tree_is_the_exhaustive_argmax() {
    for seed in 0..8u64 {
        let n = 2 + seed as usize % 7;
        let (store, st) = stack(seed, config(8, 1, seed % 2 == 1));
        let oracle = brute_force_oracle(&store, &st, &embeddings(seed, n, 8)).unwrap();
        let last = oracle.layers.last().unwrap();
        assert_eq!(best_tree_exhaustive(n, &last.split_scores).unwrap(), oracle.best_tree);
    }
}

#[test]
fn two_tokens_cost_two_composes_per_layer() {
    let t = BinaryTree::balanced(2).unwrap();
    let s = plan(2, 2, &SplitOrder::from_tree(&t)).unwrap();
    assert_eq!(schedule_counters(&s, 1).composes(), 2);
    assert_eq!(tree_counters(&t, 1).composes(), 2);
}

#[test]
fn compose_counts_grow_linearly() {
    let composes = |n: usize| {
        let t = BinaryTree::balanced(n).unwrap();
        schedule_counters(&plan(n, 2, &SplitOrder::from_tree(&t)).unwrap(), 1).composes() as f64
    };
    let slopes: Vec<f64> = [32usize, 64, 128].iter().map(|&n| (composes(2 * n) - composes(n)) / n as f64).collect();
    let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
    for s in &slopes {
        assert!((s - mean).abs() / mean <= 0.2, "{slopes:?}");
    }
}

#[test]
fn report_buckets_sum_in_order() {
    let t = BinaryTree::balanced(8).unwrap();
    let c = tree_counters(&t, 2);
    let costs: Vec<SentenceCost> =
        [3usize, 9, 12, 4].iter().map(|&n| SentenceCost { n, counters: c, wall_ms: n as f64 }).collect();
    let r = efficiency_report(&costs, 8);
    assert_eq!(r.len(), 2);
    assert_eq!((r[0].bucket, r[0].sentences, r[0].wall_ms), (0, 2, 7.0));
    assert_eq!((r[1].bucket, r[1].sentences, r[1].wall_ms), (8, 2, 21.0));
    assert_eq!(r[1].counters.composes(), 2 * c.composes());
}

fn tree_pair() -> impl Strategy<Value = (BinaryTree, BinaryTree)> {
    (2usize..24, any::<u64>()).prop_map(|(n, seed)| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (BinaryTree::random(n, &mut r).unwrap(), BinaryTree::random(n, &mut r).unwrap())
    })
}

proptest! {
    #[test]
    fn f1_is_symmetric_and_bounded((a, b) in tree_pair()) {
        let (a, b) = (BracketSet::from_binary(&a), BracketSet::from_binary(&b));
        let ab = sentence_f1(&a, &b).unwrap();
        prop_assert!((ab - sentence_f1(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=100.0).contains(&ab));
    }
}
