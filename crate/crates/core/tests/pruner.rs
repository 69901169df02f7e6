use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recat_core::chart::{ParentLink, Schedule, Side, Span, SpanMap};
use recat_core::numerics::{gradcheck, Ctx, Gradients, ParamStore};
use recat_core::pruner::{
    apply_nonsplittable, build_cell_batches, parser_nll, parser_nll_taped, plan, prune_schedule, prune_trace,
    split_order, ParserConfig, ParserModel, SplitOrder, SplitScores,
};
use recat_core::tree::BinaryTree;
use recat_core::{Error, Result};

fn scores(v: &[f64]) -> SplitScores<f64> {
    SplitScores::new(v.to_vec())
}

/// Scores whose descending order is 3, 4, 2, 5, 1.
fn worked_example() -> SplitOrder {
    split_order(&scores(&[1.0, 3.0, 5.0, 4.0, 2.0]))
}

fn splits_of(order: &SplitOrder) -> Vec<usize> {
    order.steps.iter().map(|s| s.split).collect()
}

#[test]
fn increasing_scores_split_right_first() {
    assert_eq!(splits_of(&split_order(&scores(&[1.0, 2.0, 3.0]))), [3, 2, 1]);
}

#[test]
fn worked_example_merge_order_and_groups() {
    let order = worked_example();
    assert_eq!(splits_of(&order), [3, 4, 2, 5, 1]);
    assert_eq!(order.merge_order(), [1, 5, 2, 4, 3]);
    assert_eq!(order.merge_groups().unwrap(), vec![vec![1, 5], vec![2, 4], vec![3]]);
}

#[test]
fn worked_example_valid_splits() {
    let raw = prune_schedule(6, 2, &worked_example()).unwrap();
    assert_eq!(raw.splits_of(Span::new(1, 4)), [2, 3]);
    assert_eq!(raw.splits_of(Span::new(3, 6)), [3, 4]);
    assert_eq!(raw.splits_of(Span::new(1, 6)), [3, 4]);
    // Manual replay: the five width-2 and four width-3 cells, then (1,4) after
    // merging 1, (3,6) after merging 5, the root after merging 2.
    let mut cells: Vec<Span> = raw.cells().collect();
    cells.sort();
    let mut expect = vec![
        Span::new(1, 2),
        Span::new(2, 3),
        Span::new(3, 4),
        Span::new(4, 5),
        Span::new(5, 6),
        Span::new(1, 3),
        Span::new(2, 4),
        Span::new(3, 5),
        Span::new(4, 6),
        Span::new(1, 4),
        Span::new(3, 6),
        Span::new(1, 6),
    ];
    expect.sort();
    assert_eq!(cells, expect);
    let (_, trace) = prune_trace(6, 2, &worked_example()).unwrap();
    let appended: Vec<(usize, Vec<Span>)> = trace.iter().map(|t| (t.split, t.appended.clone())).collect();
    assert_eq!(
        appended,
        vec![
            (1, vec![Span::new(1, 4)]),
            (5, vec![Span::new(3, 6)]),
            (2, vec![Span::new(1, 6)]),
            (4, vec![]),
            (3, vec![]),
        ]
    );

    let batched = build_cell_batches(&raw).unwrap();
    let mut kept: Vec<Span> = batched.cells().collect();
    kept.sort();
    let mut want = vec![
        Span::new(1, 2),
        Span::new(2, 3),
        Span::new(3, 4),
        Span::new(4, 5),
        Span::new(5, 6),
        Span::new(1, 3),
        Span::new(4, 6),
        Span::new(1, 4),
        Span::new(1, 6),
    ];
    want.sort();
    assert_eq!(kept, want);
}

/// Independent inversion: scan every (cell, split) pair for each child.
fn brute_parents(s: &Schedule) -> SpanMap<Vec<ParentLink>> {
    let mut out: SpanMap<Vec<ParentLink>> = SpanMap::new(s.n);
    for i in 1..=s.n {
        for j in i..=s.n {
            let child = Span::new(i, j);
            let mut links = Vec::new();
            for (parent, ks) in s.splits.iter() {
                for &k in ks {
                    if k == j && parent.i == i {
                        links.push(ParentLink { parent, endpoint: parent.j, side: Side::LeftChild });
                    }
                    if k + 1 == i && parent.j == j {
                        links.push(ParentLink { parent, endpoint: parent.i, side: Side::RightChild });
                    }
                }
            }
            if !links.is_empty() {
                out.insert(child, links);
            }
        }
    }
    out
}

#[test]
fn parent_map_matches_brute_force_inversion() {
    for s in [prune_schedule(6, 2, &worked_example()).unwrap(), plan(6, 2, &worked_example()).unwrap()] {
        let brute = brute_parents(&s);
        for (child, links) in brute.iter() {
            let mut a = s.parents_of(child).to_vec();
            let mut b = links.clone();
            a.sort();
            b.sort();
            assert_eq!(a, b, "{child:?}");
        }
        assert_eq!(brute.len(), s.parents.len());
    }
}

#[test]
fn short_sentences_give_the_full_chart() {
    for n in 1..=9usize {
        for m in [n.max(2), n + 3] {
            let mut r = ChaCha8Rng::seed_from_u64(n as u64);
            let v: Vec<f64> = (1..n).map(|_| r.gen()).collect();
            let s = plan(n, m, &split_order(&scores(&v))).unwrap();
            let full = Schedule::full(n).unwrap();
            assert_eq!(s.splits, full.splits, "n={n} m={m}");
        }
    }
}

#[test]
fn two_tokens_batch_trivially() {
    let s = plan(2, 2, &split_order(&scores(&[0.3]))).unwrap();
    assert_eq!(s.batches, vec![vec![Span::leaf(1), Span::leaf(2)], vec![Span::new(1, 2)]]);
}

#[test]
fn single_token_has_no_cells() {
    let s = plan(1, 2, &split_order(&scores(&[]))).unwrap();
    assert_eq!(s.inside_steps(), 0);
    assert_eq!(s.cell_count(), 0);
}

fn tree_order(t: &BinaryTree) -> SplitOrder {
    // Scores decreasing with height make the split order reproduce `t`.
    let n = t.len();
    let mut v = vec![0.0; n - 1];
    let order = SplitOrder::from_tree(t);
    for (h, step) in order.heights().unwrap().iter().enumerate() {
        v[h] = *step as f64 - (h as f64) * 1e-3;
    }
    let o = split_order(&scores(&v));
    assert_eq!(o.tree().unwrap(), *t);
    o
}

#[test]
fn balanced_eight_needs_at_most_seven_steps() {
    let o = tree_order(&BinaryTree::balanced(8).unwrap());
    let s = plan(8, 2, &o).unwrap();
    assert!(s.inside_steps() <= 7, "{}", s.inside_steps());
}

#[test]
fn left_branching_needs_linear_steps() {
    let steps: Vec<usize> = [8usize, 16, 32]
        .iter()
        .map(|&n| plan(n, 2, &tree_order(&BinaryTree::left_branching(n).unwrap())).unwrap().inside_steps())
        .collect();
    assert_eq!(steps, [7, 15, 31]);
}

#[test]
fn balanced_steps_grow_logarithmically() {
    for n in [8usize, 16, 32, 64, 128, 256, 512] {
        let s = plan(n, 2, &tree_order(&BinaryTree::balanced(n).unwrap())).unwrap();
        let bound = 1 + 2 * (n as f64).log2().ceil() as usize;
        assert!(s.inside_steps() <= bound, "n={n}: {} > {bound}", s.inside_steps());
    }
}

#[test]
fn forbidding_the_only_split_inside_a_word() {
    let v = apply_nonsplittable(&scores(&[0.0, 9.0]), &[2]).unwrap();
    assert_eq!(v.v[1], f64::NEG_INFINITY);
    assert_eq!(splits_of(&split_order(&v)), [1, 2]);
    assert!(matches!(apply_nonsplittable(&scores(&[1.0, 2.0]), &[1, 2]), Err(Error::NoAdmissibleTree)));
    assert!(matches!(apply_nonsplittable(&scores(&[1.0]), &[3]), Err(Error::Input(_))));
    assert_eq!(apply_nonsplittable(&scores(&[1.0, 2.0]), &[]).unwrap(), scores(&[1.0, 2.0]));
}

#[test]
fn word_spans_are_always_constituents() {
    let mut r = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = r.gen_range(2..=8);
        // random segmentation into words
        let mut forbidden = Vec::new();
        let mut words = Vec::new();
        let mut start = 1;
        for k in 1..n {
            if r.gen_bool(0.4) {
                forbidden.push(k);
            } else {
                words.push(Span::new(start, k));
                start = k + 1;
            }
        }
        words.push(Span::new(start, n));
        let v: Vec<f64> = (1..n).map(|_| r.gen_range(-3.0..3.0)).collect();
        let masked = match apply_nonsplittable(&scores(&v), &forbidden) {
            Ok(m) => m,
            Err(Error::NoAdmissibleTree) => {
                assert_eq!(words.len(), 1);
                continue;
            }
            Err(e) => panic!("{e}"),
        };
        let tree = split_order(&masked).tree().unwrap();
        let nodes: Vec<Span> = tree.nodes().iter().map(|nd| nd.span).collect();
        for w in &words {
            assert!(nodes.contains(w), "{w:?} missing from {nodes:?}");
        }
    }
}

/// Independent recursive argmax reference.
fn recursive_argmax(v: &[f64], i: usize, j: usize, out: &mut Vec<(usize, usize, usize)>) {
    if i == j {
        return;
    }
    let mut best = i;
    for k in i..j {
        if v[k - 1] > v[best - 1] {
            best = k;
        }
    }
    out.push((i, j, best));
    recursive_argmax(v, i, best, out);
    recursive_argmax(v, best + 1, j, out);
}

#[test]
fn parser_loss_closed_forms() {
    let target = SplitOrder::from_tree(&BinaryTree::right_branching(3).unwrap());
    let nll = parser_nll(&[0.0, 0.0], &target).unwrap();
    assert!((nll - std::f64::consts::LN_2).abs() < 1e-15);
    let sat = parser_nll(&[80.0, -80.0], &target).unwrap();
    assert!(sat >= 0.0 && sat < 1e-30);
    let bad = SplitOrder { n: 3, steps: vec![recat_core::pruner::SplitStep { split: 3, span: Span::new(1, 3) }] };
    assert!(matches!(parser_nll(&[0.0, 0.0], &bad), Err(Error::Structure(_))));
}

#[test]
fn parser_loss_matches_direct_summation() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let v: Vec<f64> = (0..5).map(|_| r.gen_range(-2.0..2.0)).collect();
    let tree = BinaryTree::random(6, &mut r).unwrap();
    let target = SplitOrder::from_tree(&tree);
    let mut direct = 0.0f64;
    for step in &target.steps {
        let z: f64 = (step.span.i..step.span.j).map(|k| v[k - 1].exp()).sum();
        direct -= (v[step.split - 1].exp() / z).ln();
    }
    let got = parser_nll(&v, &target).unwrap();
    assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
}

fn parser(vocab: usize) -> (ParamStore<f64>, ParserModel) {
    let mut store = ParamStore::new();
    let cfg = ParserConfig { vocab, embed_dim: 6, hidden: 5, layers: 2, head_hidden: 7 };
    let m = ParserModel::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    (store, m)
}

#[test]
fn parser_scores_shapes_and_determinism() {
    let (store, p) = parser(10);
    assert!(p.score_splits(&store, &[4]).unwrap().v.is_empty());
    assert_eq!(p.score_splits(&store, &[4, 1]).unwrap().v.len(), 1);
    let a = p.score_splits(&store, &[1, 2, 3, 4, 5]).unwrap();
    let b = p.score_splits(&store, &[1, 2, 3, 4, 5]).unwrap();
    assert_eq!(a.v.len(), 4);
    assert_eq!(a, b);
    assert!(matches!(p.score_splits(&store, &[1, 10]), Err(Error::Input(_))));
}

#[test]
fn parser_gradients_check() {
    let (store, p) = parser(8);
    let tokens = [1usize, 5, 2, 7, 3];
    let target = SplitOrder::from_tree(&BinaryTree::balanced(5).unwrap());
    let eval = |s: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
        let mut ctx = Ctx::new(s);
        let v = p.score_taped(&mut ctx, &tokens)?.unwrap();
        let loss = parser_nll_taped(&mut ctx, v, &target)?;
        let pure = parser_nll(ctx.value(v).data(), &target)?;
        assert!((pure - ctx.scalar_value(loss)).abs() < 1e-12);
        Ok((ctx.scalar_value(loss), ctx.gradients(loss)?))
    };
    let report =
        gradcheck(&store, eval, |n| n.split('.').take(2).collect::<Vec<_>>().join("."), 1e-5, 8, 1e-6).unwrap();
    assert!(report.passes(1e-4), "{report:?}");
}

fn order_strategy() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..40).prop_flat_map(|n| (Just(n), prop::collection::vec(-5.0f64..5.0, n - 1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn split_order_is_recursive_argmax((n, v) in order_strategy()) {
        let order = split_order(&scores(&v));
        order.validate().unwrap();
        let mut want = Vec::new();
        recursive_argmax(&v, 1, n, &mut want);
        let mut got: Vec<(usize, usize, usize)> =
            order.steps.iter().map(|s| (s.span.i, s.span.j, s.split)).collect();
        got.sort();
        want.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn split_order_ignores_monotone_transforms((_n, v) in order_strategy()) {
        let t: Vec<f64> = v.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
        prop_assert_eq!(split_order(&scores(&v)), split_order(&scores(&t)));
    }

    #[test]
    fn schedules_are_linear_and_topological((n, v) in order_strategy(), m in 2usize..6) {
        let order = split_order(&scores(&v));
        let raw = prune_schedule(n, m, &order).unwrap();
        let s = build_cell_batches(&raw).unwrap();
        s.validate().unwrap();
        prop_assert!(s.cell_count() <= 2 * m * n);
        prop_assert!(s.max_splits() <= m);
        prop_assert!(s.splits.contains(s.root()));
        // K -> P -> K round trip
        let mut back: SpanMap<Vec<usize>> = SpanMap::new(n);
        for (child, links) in s.parents.iter() {
            for l in links {
                let k = l.split(child);
                let e = back.entry_or_insert_with(l.parent, Vec::new);
                if !e.contains(&k) { e.push(k); }
            }
        }
        for (span, ks) in s.splits.iter() {
            let mut b = back.get(span).cloned().unwrap_or_default();
            b.sort();
            prop_assert_eq!(&b, ks);
        }
    }
}

#[test]
fn long_random_orders_stay_linear() {
    let mut r = ChaCha8Rng::seed_from_u64(99);
    for n in [64usize, 128, 256, 512] {
        for m in [2usize, 3, 4] {
            let v: Vec<f64> = (1..n).map(|_| r.gen()).collect();
            let s = plan(n, m, &split_order(&scores(&v))).unwrap();
            assert!(s.cell_count() <= 2 * m * n);
        }
    }
}
