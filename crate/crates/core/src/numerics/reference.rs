//! Straightforward, tape-free evaluation of the network pieces.
//!
//! These functions read parameters directly from a [`ParamStore`] and
//! recompute every formula with plain loops. They share no code with the tape
//! and serve as the independent reference for the brute-force chart oracle and
//! for tests of the taped layers.

use alloc::vec;
use alloc::vec::Vec;

use super::{AttentionBlock, LayerNorm, Linear, Mlp, ParamStore, Real};

fn gelu<F: Real>(x: F) -> F {
    let k = F::c(0.797_884_560_802_865_4);
    F::c(0.5) * x * (F::one() + (k * (x + F::c(0.044715) * x.powi(3))).tanh())
}

pub fn linear<F: Real>(store: &ParamStore<F>, lin: &Linear, x: &[F]) -> Vec<F> {
    let w = store.value(lin.w);
    let b = store.value(lin.b).data();
    let (rows, cols) = (w.rows(), w.cols());
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| {
            let mut acc = b[j];
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w.data()[i * cols + j];
            }
            acc
        })
        .collect()
}

pub fn layer_norm<F: Real>(store: &ParamStore<F>, ln: &LayerNorm, x: &[F]) -> Vec<F> {
    let g = store.value(ln.gamma).data();
    let b = store.value(ln.beta).data();
    let n = F::c(x.len() as f64);
    let mean = x.iter().copied().sum::<F>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let denom = (var + F::c(1e-5)).sqrt();
    x.iter().enumerate().map(|(i, &v)| (v - mean) / denom * g[i] + b[i]).collect()
}

pub fn mlp<F: Real>(store: &ParamStore<F>, m: &Mlp, x: &[F]) -> Vec<F> {
    let mut h = x.to_vec();
    for (i, layer) in m.layers.iter().enumerate() {
        if i > 0 {
            h = h.into_iter().map(gelu).collect();
        }
        h = linear(store, layer, &h);
    }
    h
}

/// Full forward of an attention block over a sequence of row vectors.
pub fn attention_block<F: Real>(store: &ParamStore<F>, block: &AttentionBlock, x: &[Vec<F>]) -> Vec<Vec<F>> {
    let heads = block.config.heads;
    let mut h: Vec<Vec<F>> = x.to_vec();
    for layer in &block.layers {
        let normed: Vec<Vec<F>> = h.iter().map(|r| layer_norm(store, &layer.ln1, r)).collect();
        let q: Vec<Vec<F>> = normed.iter().map(|r| linear(store, &layer.wq, r)).collect();
        let k: Vec<Vec<F>> = normed.iter().map(|r| linear(store, &layer.wk, r)).collect();
        let v: Vec<Vec<F>> = normed.iter().map(|r| linear(store, &layer.wv, r)).collect();
        let d = q[0].len();
        let dh = d / heads;
        let t = h.len();
        let mut ctx_rows = vec![vec![F::zero(); d]; t];
        for head in 0..heads {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..t {
                let logits: Vec<F> = (0..t)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<F>() / F::c(dh as f64).sqrt())
                    .collect();
                let weights = super::softmax_stable(&logits).expect("non-empty");
                for c in cols.clone() {
                    ctx_rows[i][c] = (0..t).map(|j| weights[j] * v[j][c]).sum();
                }
            }
        }
        h = h
            .iter()
            .zip(&ctx_rows)
            .map(|(resid, c)| {
                let proj = linear(store, &layer.wo, c);
                let h1: Vec<F> = resid.iter().zip(&proj).map(|(&a, &b)| a + b).collect();
                let n2 = layer_norm(store, &layer.ln2, &h1);
                let f: Vec<F> = linear(store, &layer.ff1, &n2).into_iter().map(gelu).collect();
                let f2 = linear(store, &layer.ff2, &f);
                h1.iter().zip(&f2).map(|(&a, &b)| a + b).collect()
            })
            .collect();
    }
    h
}
