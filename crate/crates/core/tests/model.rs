use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recat_core::cio::Counters;
use recat_core::eval::schedule_counters;
use recat_core::model::{
    gather_and_encode, network_gradcheck, param_group, EncodeMode, Masked, Network, ReCatConfig, Sentence,
};
use recat_core::numerics::{AttentionBlock, BlockConfig, Ctx, ParamStore};
use recat_core::pruner::{apply_nonsplittable, split_order};
use recat_core::train::mask_tokens;
use recat_core::{Error, Tensor};

fn small(dim: usize, layers: usize, depth: usize) -> ReCatConfig {
    ReCatConfig {
        vocab: 50,
        dim,
        heads: 2,
        cio_layers: layers,
        transformer_depth: depth,
        parser_embed_dim: 8,
        parser_hidden: 8,
        parser_head_hidden: 8,
        max_len: 64,
        ..ReCatConfig::default()
    }
}

fn tokens(seed: u64, n: usize) -> Vec<usize> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.gen_range(2..50)).collect()
}

#[test]
fn single_token_is_a_leaf_with_zero_loss() {
    let net = Network::<f64>::new(small(8, 1, 1), 0).unwrap();
    let s = Sentence::new(vec![7]);
    let out = net.forward_pretrain(&s, &Masked::unmasked(&s.tokens), EncodeMode::Pruned).unwrap();
    assert_eq!(out.tree.len(), 1);
    assert_eq!(out.nodes.len(), 1);
    assert_eq!(out.mlm_loss, 0.0);
    assert_eq!(out.parser_loss, 0.0);
}

#[test]
fn node_sequence_has_two_n_minus_one_rows() {
    let net = Network::<f64>::new(small(8, 1, 1), 1).unwrap();
    for n in [1usize, 2, 3, 5, 8, 13, 21, 34, 64] {
        let s = Sentence::new(tokens(n as u64, n));
        for mode in [EncodeMode::Pruned, EncodeMode::Fast] {
            let out = net.forward_pretrain(&s, &Masked::unmasked(&s.tokens), mode).unwrap();
            assert_eq!(out.nodes.len(), 2 * n - 1, "n = {n}, {mode:?}");
            assert_eq!(out.mlm_logits.len(), n);
            let leaves: Vec<usize> =
                out.tree.in_order().into_iter().filter(|&id| out.tree.node(id).children.is_none()).collect();
            let spans: Vec<usize> = leaves.iter().map(|&id| out.tree.node(id).span.i).collect();
            assert_eq!(spans, (1..=n).collect::<Vec<_>>());
        }
    }
}

#[test]
fn fresh_model_mlm_loss_is_near_uniform() {
    let cfg = small(16, 1, 1);
    let net = Network::<f64>::new(cfg.clone(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut total, mut count) = (0.0, 0usize);
    for seed in 0..60u64 {
        let s = Sentence::new(tokens(100 + seed, 6 + (seed as usize % 10)));
        let m = mask_tokens(&s.tokens, 0.3, cfg.mask_id, cfg.vocab, &mut rng);
        if m.targets.is_empty() {
            continue;
        }
        let out = net.forward_pretrain(&s, &m, EncodeMode::Pruned).unwrap();
        total += out.mlm_loss * m.targets.len() as f64;
        count += m.targets.len();
    }
    let mean = total / count as f64;
    let ln_v = (cfg.vocab as f64).ln();
    assert!((mean - ln_v).abs() / ln_v < 0.05, "mean {mean} vs ln V {ln_v}");
}

#[test]
fn zero_depth_transformer_is_identity() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = AttentionBlock::new(&mut store, "t", BlockConfig::new(4, 2, 0).unwrap(), &mut rng).unwrap();
    let mut ctx = Ctx::new(&store);
    let rows: Vec<_> = (0..3).map(|i| ctx.constant(Tensor::vector(vec![i as f64, 1.0, -2.0, 0.5]))).collect();
    let out = gather_and_encode(&mut ctx, &block, &rows);
    let v = ctx.value(out);
    assert_eq!(v.shape(), &[3, 4]);
    for i in 0..3 {
        assert_eq!(v.row(i), &[i as f64, 1.0, -2.0, 0.5]);
    }
}

#[test]
fn node_encoder_is_permutation_equivariant() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = AttentionBlock::new(&mut store, "t", BlockConfig::new(8, 2, 2).unwrap(), &mut rng).unwrap();
    let data: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let perm = [3usize, 0, 4, 1, 2];
    let run = |order: &[usize]| {
        let mut ctx = Ctx::new(&store);
        let rows: Vec<_> = order.iter().map(|&i| ctx.constant(Tensor::vector(data[i].clone()))).collect();
        let out = gather_and_encode(&mut ctx, &block, &rows);
        let v = ctx.value(out).clone();
        (0..order.len()).map(|r| v.row(r).to_vec()).collect::<Vec<_>>()
    };
    let plain = run(&[0, 1, 2, 3, 4]);
    let shuffled = run(&perm);
    for (r, &i) in perm.iter().enumerate() {
        for (a, b) in shuffled[r].iter().zip(&plain[i]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_logits_do_not_see_the_original_token() {
    let cfg = small(8, 2, 1);
    let net = Network::<f64>::new(cfg.clone(), 5).unwrap();
    let s = Sentence::new(tokens(11, 7));
    let plan = net.plan(&s, EncodeMode::Pruned).unwrap();
    let mut input = s.tokens.clone();
    input[3] = cfg.mask_id;
    let masked = Masked { input, targets: vec![(3, s.tokens[3])] };
    let a = net.forward_with_plan(&s, &masked, &plan).unwrap();
    let mut other = s.clone();
    other.tokens[3] = if s.tokens[3] == 9 { 10 } else { 9 };
    let masked_b = Masked { input: masked.input.clone(), targets: vec![(3, other.tokens[3])] };
    let b = net.forward_with_plan(&other, &masked_b, &plan).unwrap();
    assert_eq!(a.mlm_logits, b.mlm_logits);
    assert_eq!(a.nodes, b.nodes);
}

#[test]
fn plan_ignores_masking() {
    let cfg = small(8, 1, 1);
    let net = Network::<f64>::new(cfg.clone(), 6).unwrap();
    let s = Sentence::new(tokens(12, 9));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = net.plan(&s, EncodeMode::Pruned).unwrap();
    for _ in 0..5 {
        let m = mask_tokens(&s.tokens, 0.5, cfg.mask_id, cfg.vocab, &mut rng);
        let a = net.sentence_gradients(&s, &m, EncodeMode::Pruned).unwrap();
        assert_eq!(a.cells, plan.schedule.as_ref().unwrap().cell_count());
        assert_eq!(a.inside_steps, plan.schedule.as_ref().unwrap().inside_steps());
    }
}

#[test]
fn fast_mode_follows_the_parser_with_fewer_composes() {
    let cfg = small(8, 2, 1);
    let net = Network::<f64>::new(cfg.clone(), 7).unwrap();
    for n in 4..=24 {
        let s = Sentence::new(tokens(n as u64 * 31, n));
        let unmasked = Masked::unmasked(&s.tokens);
        let fast = net.forward_pretrain(&s, &unmasked, EncodeMode::Fast).unwrap();
        let pruned = net.forward_pretrain(&s, &unmasked, EncodeMode::Pruned).unwrap();
        assert!(fast.counters.composes() < pruned.counters.composes(), "n = {n}");
        assert_eq!(fast.counters.composes(), 2 * (n - 1) * cfg.cio_layers);
        let scores = net.parser.score_splits(&net.parser_store, &s.tokens).unwrap();
        let expected = split_order(&apply_nonsplittable(&scores, &[]).unwrap()).tree().unwrap();
        assert_eq!(fast.tree, expected);
        assert_eq!(fast.nodes.len(), 2 * n - 1);
    }
}

#[test]
fn fast_equals_pruned_for_two_tokens() {
    let net = Network::<f64>::new(small(8, 2, 1), 8).unwrap();
    let s = Sentence::new(vec![4, 9]);
    let m = Masked::unmasked(&s.tokens);
    let a = net.forward_pretrain(&s, &m, EncodeMode::Fast).unwrap();
    let b = net.forward_pretrain(&s, &m, EncodeMode::Pruned).unwrap();
    assert_eq!(a.tree, b.tree);
    for (x, y) in a.nodes.iter().flatten().zip(b.nodes.iter().flatten()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn pruned_counters_match_schedule_replay() {
    let cfg = small(8, 2, 1);
    let net = Network::<f64>::new(cfg.clone(), 9).unwrap();
    let s = Sentence::new(tokens(77, 15));
    let plan = net.plan(&s, EncodeMode::Pruned).unwrap();
    let out = net.forward_with_plan(&s, &Masked::unmasked(&s.tokens), &plan).unwrap();
    let expected: Counters = schedule_counters(plan.schedule.as_ref().unwrap(), cfg.cio_layers);
    assert_eq!(out.counters, expected);
}

#[test]
fn separate_parameter_groups_receive_their_own_gradients() {
    let cfg = small(8, 2, 1);
    let net = Network::<f64>::new(cfg.clone(), 10).unwrap();
    let s = Sentence::new(tokens(5, 8));
    let mut input = s.tokens.clone();
    input[2] = cfg.mask_id;
    let m = Masked { input, targets: vec![(2, s.tokens[2])] };
    let g = net.sentence_gradients(&s, &m, EncodeMode::Pruned).unwrap();
    assert_eq!(g.model.values.len(), net.model_store.len());
    let parser = g.parser.unwrap();
    assert_eq!(parser.values.len(), net.parser_store.len());
    assert!(g.model.values.iter().flatten().any(|x| *x != 0.0));
    assert!(parser.values.iter().flatten().any(|x| *x != 0.0));
    assert!(net.model_store.iter().all(|(_, p)| !p.name.starts_with("parser")));
    let fast = net.sentence_gradients(&s, &m, EncodeMode::Fast).unwrap();
    assert!(fast.parser.is_none());
}

#[test]
fn input_errors() {
    let net = Network::<f64>::new(small(8, 1, 1), 11).unwrap();
    let empty = Sentence::new(vec![]);
    assert!(matches!(net.plan(&empty, EncodeMode::Pruned), Err(Error::Input(_))));
    let long = Sentence::new(vec![3; 65]);
    assert!(matches!(net.plan(&long, EncodeMode::Pruned), Err(Error::Input(_))));
    let oov = Sentence::new(vec![3, 50]);
    assert!(matches!(net.plan(&oov, EncodeMode::Fast), Err(Error::Input(_))));
    let bad_mask = Masked { input: vec![3, 4], targets: vec![(5, 1)] };
    assert!(matches!(
        net.sentence_gradients(&Sentence::new(vec![3, 4]), &bad_mask, EncodeMode::Pruned),
        Err(Error::Input(_))
    ));
}

#[test]
fn word_boundaries_constrain_the_parser_tree() {
    let net = Network::<f64>::new(small(8, 1, 1), 12).unwrap();
    // pieces 2-3 and 4-6 form words: splits 2, 4 and 5 are forbidden
    let s = Sentence { tokens: tokens(3, 7), nonsplittable: vec![2, 4, 5] };
    let out = net.forward_pretrain(&s, &Masked::unmasked(&s.tokens), EncodeMode::Fast).unwrap();
    let spans = out.tree.internal_spans();
    assert!(spans.iter().any(|sp| sp.i == 2 && sp.j == 3));
    assert!(spans.iter().any(|sp| sp.i == 4 && sp.j == 6));
    let g = net.sentence_gradients(&s, &Masked::unmasked(&s.tokens), EncodeMode::Pruned).unwrap();
    assert!(g.parser_loss.is_finite());
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        ReCatConfig { mask_rate: 0.0, ..small(8, 1, 1) },
        ReCatConfig { mask_rate: 1.0, ..small(8, 1, 1) },
        ReCatConfig { prune_m: 1, ..small(8, 1, 1) },
        ReCatConfig { cio_layers: 0, ..small(8, 1, 1) },
        ReCatConfig { dim: 7, ..small(8, 1, 1) },
        ReCatConfig { mask_id: 50, ..small(8, 1, 1) },
    ] {
        assert!(matches!(Network::<f64>::new(cfg, 0), Err(Error::Config(_))));
    }
}

#[test]
fn groups_are_descriptive() {
    assert_eq!(param_group("embed"), "embed");
    assert_eq!(param_group("cio.layer1.inside.block.layer0.attn.wq.w"), "cio.layer1.inside.block");
    assert_eq!(param_group("cio.layer0.outside.role_left"), "cio.layer0.outside.role_left");
    assert_eq!(param_group("cio.compat.inside_left.l0.w"), "cio.compat.inside_left");
    assert_eq!(param_group("transformer.layer1.ffn.w1.b"), "transformer.layer1");
    assert_eq!(param_group("parser.lstm0.fwd.w_ih"), "parser.lstm0.fwd");
}

#[test]
fn full_model_gradcheck() {
    let cfg = ReCatConfig { vocab: 50, dim: 16, cio_layers: 2, ..small(16, 2, 1) };
    let net = Network::<f64>::new(cfg.clone(), 13).unwrap();
    let s = Sentence::new(tokens(21, 5));
    let mut input = s.tokens.clone();
    input[1] = cfg.mask_id;
    input[3] = cfg.mask_id;
    let m = Masked { input, targets: vec![(1, s.tokens[1]), (3, s.tokens[3])] };
    let (model, parser) = network_gradcheck(&net, &s, &m, EncodeMode::Pruned, 1e-5, 4, 1e-4).unwrap();
    assert!(model.passes(1e-3), "{model:#?}");
    assert!(parser.passes(1e-3), "{parser:#?}");
}
