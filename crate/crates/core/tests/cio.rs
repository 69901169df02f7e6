mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recat_core::chart::{Schedule, Span, SpanMap};
use recat_core::cio::{compatibility, compose, induce_tree, run_stack, CioConfig, Counters, OutsideMode, Slot};
use recat_core::eval::{brute_force_oracle, schedule_counters};
use recat_core::numerics::{gradcheck, reference, Ctx, Gradients, ParamStore};
use recat_core::pruner::{plan, prune_schedule, split_order, SplitScores};
use recat_core::{Error, Result, Tensor};

fn random_plan(seed: u64, n: usize, m: usize) -> Schedule {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (1..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    plan(n, m, &split_order(&SplitScores::new(v))).unwrap()
}

#[test]
fn engine_matches_cubic_oracle() {
    for seed in 0..24u64 {
        let n = 1 + (seed as usize % 8);
        let cfg = config(8, 2, seed % 2 == 0);
        let (store, st) = stack(seed, cfg);
        let emb = embeddings(seed, n, 8);
        let schedule = random_plan(seed, n, n.max(2));
        let (charts, _) = run(&store, &st, &schedule, &emb, OutsideMode::Cumulative).unwrap();
        let oracle = brute_force_oracle(&store, &st, &emb).unwrap();
        for (chart, ol) in charts.iter().zip(&oracle.layers) {
            for (s, cell) in chart.cells.iter() {
                assert!(max_diff(&cell.inside, ol.inside.get(s).unwrap()) < 1e-9, "inside {s:?}");
                assert!((cell.inside_score - ol.inside_score.get(s).unwrap()).abs() < 1e-9);
                assert!(max_diff(&cell.outside, ol.outside.get(s).unwrap()) < 1e-9, "outside {s:?}");
                assert!((cell.outside_score - ol.outside_score.get(s).unwrap()).abs() < 1e-9);
                if !s.is_leaf() {
                    assert!(max_diff(&cell.split_scores, ol.split_scores.get(s).unwrap()) < 1e-9);
                }
            }
            assert_eq!(chart.cells.len(), n * (n + 1) / 2);
        }
        assert_eq!(induce_tree(charts.last().unwrap()).unwrap(), oracle.best_tree, "seed {seed}");
    }
}

#[test]
fn cumulative_update_equals_direct_softmax() {
    let mut seen = [false; 7];
    for seed in 0..6u64 {
        let n = 4 + seed as usize;
        let (store, st) = stack(seed + 100, config(8, 1, false));
        let emb = embeddings(seed, n, 8);
        for schedule in [Schedule::full(n).unwrap(), random_plan(seed, n, 2)] {
            let (cum, _) = run(&store, &st, &schedule, &emb, OutsideMode::Cumulative).unwrap();
            let (dir, _) = run(&store, &st, &schedule, &emb, OutsideMode::Direct).unwrap();
            for (s, cell) in cum[0].cells.iter() {
                let other = dir[0].cell(s).unwrap();
                assert!(max_diff(&cell.outside, &other.outside) < 1e-9);
                assert!((cell.outside_score - other.outside_score).abs() < 1e-9);
                let parents = schedule.parents_of(s).len();
                if parents < seen.len() {
                    seen[parents] = true;
                }
            }
        }
    }
    assert!(seen[1..=6].iter().all(|x| *x), "parent counts covered: {seen:?}");
}

#[test]
fn single_and_two_token_sentences() {
    let (store, st) = stack(1, config(8, 2, false));
    let emb = embeddings(1, 1, 8);
    let (charts, counters) = run(&store, &st, &Schedule::full(1).unwrap(), &emb, OutsideMode::Cumulative).unwrap();
    let leaf = charts[1].cell(Span::leaf(1)).unwrap();
    assert_eq!(leaf.inside, emb[0]);
    assert_eq!(leaf.outside, charts[1].root_outside);
    assert_eq!(counters.composes(), 0);
    assert_eq!(induce_tree(&charts[1]).unwrap().len(), 1);

    let (store, st) = stack(2, config(8, 1, false));
    let emb = embeddings(2, 2, 8);
    let (charts, counters) = run(&store, &st, &Schedule::full(2).unwrap(), &emb, OutsideMode::Cumulative).unwrap();
    assert_eq!(counters.composes(), 2);
    let root = charts[0].cell(Span::new(1, 2)).unwrap();
    assert_eq!(root.split_scores.len(), 1);
    assert_eq!(root.inside_score, root.split_scores[0]);
}

#[test]
fn equal_split_scores_average_the_candidates() {
    let (mut store, st) = stack(3, config(8, 1, false));
    // zero compatibility heads: every ā is 0 and every a is 0
    for m in [&st.compat.inside_left, &st.compat.inside_right] {
        for lin in &m.layers {
            for id in [lin.w, lin.b] {
                store.get_mut(id).tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    let emb = embeddings(3, 3, 8);
    let schedule = Schedule::full(3).unwrap();
    let mut ctx = Ctx::new(&store);
    let lv = leaves(&mut ctx, &emb);
    let mut counters = Counters::default();
    let layers = run_stack(&mut ctx, &st, &schedule, &lv, OutsideMode::Cumulative, &mut counters).unwrap();
    let chart = layers[0].to_chart(ctx.tape(), &schedule).unwrap();
    let third = store.value(st.outside0).data().to_vec();
    let p = st.inside_params(0);
    let c = |l: &[f64], r: &[f64]| {
        let rows = vec![
            l.iter().zip(store.value(p.role_left).data()).map(|(a, b)| a + b).collect::<Vec<_>>(),
            r.iter().zip(store.value(p.role_right).data()).map(|(a, b)| a + b).collect(),
            third.iter().zip(store.value(p.role_parent).data()).map(|(a, b)| a + b).collect(),
        ];
        reference::attention_block(&store, &p.block, &rows).swap_remove(2)
    };
    let e = |s: Span| chart.cell(s).unwrap().inside.clone();
    let c1 = c(&e(Span::leaf(1)), &e(Span::new(2, 3)));
    let c2 = c(&e(Span::new(1, 2)), &e(Span::leaf(3)));
    let mean: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| 0.5 * (a + b)).collect();
    assert!(max_diff(&chart.cell(Span::new(1, 3)).unwrap().inside, &mean) < 1e-12);
    let w = ctx.value(*layers[0].split_weights.get(Span::new(1, 3)).unwrap());
    assert_eq!(w.data(), &[0.5, 0.5]);
}

#[test]
fn split_weights_are_distributions() {
    let (store, st) = stack(4, config(8, 2, true));
    let emb = embeddings(4, 9, 8);
    let schedule = random_plan(4, 9, 3);
    let mut ctx = Ctx::new(&store);
    let lv = leaves(&mut ctx, &emb);
    let layers = run_stack(&mut ctx, &st, &schedule, &lv, OutsideMode::Cumulative, &mut Counters::default()).unwrap();
    for l in &layers {
        for (_, w) in l.split_weights.iter() {
            let total: f64 = ctx.value(*w).data().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_compatibility_of_unit_vectors() {
    let cfg = CioConfig { dim: 4, heads: 2, layers: 1, compose_depth: 1, share: false, compat_layers: 1 };
    let (mut store, st) = stack(5, cfg);
    for m in [&st.compat.inside_left, &st.compat.inside_right] {
        let lin = m.layers[0];
        let w = store.get_mut(lin.w).tensor.data_mut();
        for (i, x) in w.iter_mut().enumerate() {
            *x = if i % 5 == 0 { 1.0 } else { 0.0 };
        }
        store.get_mut(lin.b).tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let mut ctx = Ctx::new(&store);
    let e1 = ctx.vector(vec![1.0, 0.0, 0.0, 0.0]);
    let e2 = ctx.vector(vec![0.0, 1.0, 0.0, 0.0]);
    let same = compatibility(&mut ctx, &st.compat.inside_left, &st.compat.inside_right, e1, e1);
    let orth = compatibility(&mut ctx, &st.compat.inside_left, &st.compat.inside_right, e1, e2);
    assert_eq!(ctx.scalar_value(same), 0.5);
    assert_eq!(ctx.scalar_value(orth), 0.0);
}

#[test]
fn compatibility_matches_direct_dot_product() {
    let (store, st) = stack(6, config(8, 1, false));
    let x = embeddings(6, 2, 8);
    let mut ctx = Ctx::new(&store);
    let (xv, yv) = (ctx.vector(x[0].clone()), ctx.vector(x[1].clone()));
    let got = compatibility(&mut ctx, &st.compat.outside_left, &st.compat.outside_right, xv, yv);
    let u = reference::mlp(&store, &st.compat.outside_left, &x[0]);
    let v = reference::mlp(&store, &st.compat.outside_right, &x[1]);
    let want: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / 8f64.sqrt();
    assert!((ctx.scalar_value(got) - want).abs() < 1e-12);
}

#[test]
fn compose_with_zero_projections_is_residual_only() {
    let (mut store, st) = stack(7, config(8, 1, false));
    let p = st.inside_params(0).clone();
    for layer in &p.block.layers {
        for lin in [layer.wo, layer.ff2] {
            for id in [lin.w, lin.b] {
                store.get_mut(id).tensor.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }
    let x = embeddings(7, 3, 8);
    let mut ctx = Ctx::new(&store);
    let v: Vec<_> = x.iter().map(|r| ctx.vector(r.clone())).collect();
    let out = compose(&mut ctx, &p, v[0], v[1], v[2], &[Slot::Left, Slot::Right, Slot::Parent]);
    let out = ctx.value(out).clone();
    for (row, (xi, role)) in x.iter().zip([p.role_left, p.role_right, p.role_parent]).enumerate() {
        let want: Vec<f64> = xi.iter().zip(store.value(role).data()).map(|(a, b)| a + b).collect();
        assert_eq!(out.row(row), want.as_slice());
    }
}

#[test]
fn compose_is_symmetric_under_relabeling() {
    let (mut store, st) = stack(8, config(8, 1, false));
    let p = st.inside_params(0).clone();
    let x = embeddings(8, 3, 8);
    let read = |store: &ParamStore<f64>, l: &[f64], r: &[f64]| {
        let mut ctx = Ctx::new(store);
        let (a, b, c) = (ctx.vector(l.to_vec()), ctx.vector(r.to_vec()), ctx.vector(x[2].clone()));
        let out = compose(&mut ctx, &p, a, b, c, &[Slot::Parent]);
        ctx.value(out).data().to_vec()
    };
    let before = read(&store, &x[0], &x[1]);
    let rl = store.value(p.role_left).clone();
    let rr = store.value(p.role_right).clone();
    store.get_mut(p.role_left).tensor = rr;
    store.get_mut(p.role_right).tensor = rl;
    let after = read(&store, &x[1], &x[0]);
    assert!(max_diff(&before, &after) < 1e-12);
}

#[test]
fn compose_matches_reference_block() {
    let (store, st) = stack(9, config(8, 1, false));
    let p = st.outside_params(0).clone();
    let x = embeddings(9, 3, 8);
    let mut ctx = Ctx::new(&store);
    let v: Vec<_> = x.iter().map(|r| ctx.vector(r.clone())).collect();
    let out = compose(&mut ctx, &p, v[0], v[1], v[2], &[Slot::Right]);
    let rows: Vec<Vec<f64>> = x
        .iter()
        .zip([p.role_left, p.role_right, p.role_parent])
        .map(|(r, role)| r.iter().zip(store.value(role).data()).map(|(a, b)| a + b).collect())
        .collect();
    let want = reference::attention_block(&store, &p.block, &rows);
    assert!(max_diff(ctx.value(out).data(), &want[1]) < 1e-12);
}

#[test]
fn layers_refine_and_every_outside_sees_every_token() {
    let (store, st) = stack(10, config(8, 2, false));
    let n = 7;
    let emb = embeddings(10, n, 8);
    let schedule = random_plan(10, n, 2);
    let (a, _) = run(&store, &st, &schedule, &emb, OutsideMode::Cumulative).unwrap();
    for (s, cell) in a[1].cells.iter() {
        assert!(max_diff(&cell.outside, &a[0].cell(s).unwrap().outside) > 1e-9);
    }
    let mut emb2 = emb.clone();
    emb2[3][0] += 0.5;
    let (b, _) = run(&store, &st, &schedule, &emb2, OutsideMode::Cumulative).unwrap();
    for l in 0..2 {
        for (s, cell) in a[l].cells.iter().filter(|(s, _)| *s != schedule.root()) {
            assert!(max_diff(&cell.outside, &b[l].cell(s).unwrap().outside) > 0.0, "layer {l} {s:?}");
        }
    }
}

#[test]
fn induced_tree_is_binary_and_shift_invariant() {
    let (store, st) = stack(11, config(8, 1, false));
    let n = 10;
    let schedule = random_plan(11, n, 2);
    let (charts, _) = run(&store, &st, &schedule, &embeddings(11, n, 8), OutsideMode::Cumulative).unwrap();
    let t = induce_tree(&charts[0]).unwrap();
    assert_eq!(t.nodes().len(), 2 * n - 1);
    assert_eq!(t.nodes().iter().filter(|nd| nd.children.is_none()).count(), n);
    let mut shifted = charts[0].clone();
    for (s, _) in charts[0].cells.iter() {
        if let Some(cell) = shifted.cells.get_mut(s) {
            cell.split_scores.iter_mut().for_each(|x| *x += 3.25);
        }
    }
    assert_eq!(induce_tree(&shifted).unwrap(), t);
}

#[test]
fn engine_counters_match_schedule_counts() {
    let (store, st) = stack(12, config(8, 2, false));
    let schedule = random_plan(12, 11, 2);
    let (_, counters) = run(&store, &st, &schedule, &embeddings(12, 11, 8), OutsideMode::Cumulative).unwrap();
    assert_eq!(counters, schedule_counters(&schedule, 2));
}

#[test]
fn missing_subspan_is_a_schedule_violation() {
    let (store, st) = stack(13, config(8, 1, false));
    let mut splits = SpanMap::new(3);
    splits.insert(Span::new(1, 3), vec![1]);
    let bad = Schedule {
        n: 3,
        batches: vec![(1..=3).map(Span::leaf).collect(), vec![Span::new(1, 3)]],
        splits,
        parents: SpanMap::new(3),
        merge_groups: vec![],
    };
    let r = run(&store, &st, &bad, &embeddings(13, 3, 8), OutsideMode::Cumulative);
    assert!(matches!(r, Err(Error::ScheduleViolation(_))));
}

#[test]
fn dangling_cells_are_a_schedule_violation() {
    let (store, st) = stack(14, config(8, 1, false));
    let order = split_order(&SplitScores::new(vec![1.0, 3.0, 5.0, 4.0, 2.0]));
    let raw = prune_schedule(6, 2, &order).unwrap();
    let r = run(&store, &st, &raw, &embeddings(14, 6, 8), OutsideMode::Cumulative);
    assert!(matches!(r, Err(Error::ScheduleViolation(_))));
}

#[test]
fn every_parameter_group_gets_gradient() {
    let (store, st) = stack(15, config(8, 2, false));
    let n = 5;
    let emb = embeddings(15, n, 8);
    let schedule = random_plan(15, n, 2);
    let eval = |s: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
        let mut ctx = Ctx::new(s);
        let lv: Vec<_> = emb.iter().map(|e| ctx.constant(Tensor::vector(e.clone()))).collect();
        let layers = run_stack(&mut ctx, &st, &schedule, &lv, OutsideMode::Cumulative, &mut Counters::default())?;
        let last = layers.last().unwrap();
        let mut terms = Vec::new();
        for i in 1..=n {
            let o = *last.outside.get(Span::leaf(i)).unwrap();
            let w = ctx.vector((0..8).map(|c| ((i * 3 + c) % 5) as f64 - 2.0).collect());
            terms.push(ctx.dot(o, w));
        }
        terms.push(*last.inside_score.get(Span::new(1, n)).unwrap());
        let loss = ctx.add_all(&terms);
        Ok((ctx.scalar_value(loss), ctx.gradients(loss)?))
    };
    let group = |name: &str| -> String {
        let parts: Vec<&str> = name.split('.').collect();
        match parts.as_slice() {
            ["cio", "compat", which, ..] => format!("compat.{which}"),
            ["cio", layer, kind, "block", ..] => format!("{layer}.{kind}.block"),
            ["cio", layer, kind, role] => format!("{layer}.{kind}.{role}"),
            _ => name.to_string(),
        }
    };
    let report = gradcheck(&store, eval, group, 1e-5, 6, 1e-4).unwrap();
    assert!(report.passes(1e-4), "{report:#?}");
}
