#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recat_core::chart::{ChartLayer, Schedule};
use recat_core::cio::{run_stack, CioConfig, CioStack, Counters, OutsideMode};
use recat_core::numerics::{Ctx, ParamStore, Var};
use recat_core::{Result, Tensor};

pub fn config(dim: usize, layers: usize, share: bool) -> CioConfig {
    CioConfig { dim, heads: 2, layers, compose_depth: 1, share, compat_layers: 2 }
}

pub fn stack(seed: u64, cfg: CioConfig) -> (ParamStore<f64>, CioStack) {
    let mut store = ParamStore::new();
    let s = CioStack::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, s)
}

pub fn embeddings(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn leaves(ctx: &mut Ctx<'_, f64>, emb: &[Vec<f64>]) -> Vec<Var> {
    emb.iter().map(|e| ctx.constant(Tensor::vector(e.clone()))).collect()
}

/// Runs the engine and materializes every layer.
pub fn run(
    store: &ParamStore<f64>,
    st: &CioStack,
    schedule: &Schedule,
    emb: &[Vec<f64>],
    mode: OutsideMode,
) -> Result<(Vec<ChartLayer<f64>>, Counters)> {
    let mut ctx = Ctx::new(store);
    let lv = leaves(&mut ctx, emb);
    let mut counters = Counters::default();
    let layers = run_stack(&mut ctx, st, schedule, &lv, mode, &mut counters)?;
    let charts = layers.iter().map(|l| l.to_chart(ctx.tape(), schedule)).collect::<Result<Vec<_>>>()?;
    Ok((charts, counters))
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
