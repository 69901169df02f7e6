use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{Ctx, Init, ParamId, ParamStore, Real, Tensor, Var};
use crate::{Error, Result};

/// Affine map `x · w + b` with `w` stored as `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[input, output], Init::Xavier, rng)?;
        let b = store.add(&format!("{name}.b"), &[output], Init::Zeros, rng)?;
        Ok(Linear { w, b })
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Var {
        let w = ctx.param(self.w);
        let b = ctx.param(self.b);
        ctx.affine(x, w, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let gamma = store.add(&format!("{name}.gamma"), &[dim], Init::Ones, rng)?;
        let beta = store.add(&format!("{name}.beta"), &[dim], Init::Zeros, rng)?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Var {
        let g = ctx.param(self.gamma);
        let b = ctx.param(self.beta);
        ctx.layer_norm(x, g, b)
    }
}

/// Stack of affine layers with GELU between consecutive layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("mlp {name} needs at least two dims")));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = ctx.gelu(h);
            }
            h = layer.forward(ctx, h);
        }
        h
    }
}

/// Shape of a Transformer block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Number of stacked encoder layers.
    pub depth: usize,
}

impl BlockConfig {
    pub fn new(dim: usize, heads: usize, depth: usize) -> Result<Self> {
        let cfg = BlockConfig { dim, heads, ffn_dim: 4 * dim, depth };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(format!("degenerate block {self:?}")));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!("dim {} is not divisible by {} heads", self.dim, self.heads)));
        }
        Ok(())
    }
}

/// One pre-norm encoder layer: `x + Attn(LN(x))`, then `h + FFN(LN(h))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// Pre-norm self-attention stack without positional encodings and without a
/// final normalization, so zero projections make it the identity map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionBlock {
    pub config: BlockConfig,
    pub layers: Vec<EncoderLayer>,
}

impl AttentionBlock {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        config: BlockConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (d, f) = (config.dim, config.ffn_dim);
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let p = format!("{name}.layer{l}");
            layers.push(EncoderLayer {
                ln1: LayerNorm::new(store, &format!("{p}.ln1"), d, rng)?,
                wq: Linear::new(store, &format!("{p}.attn.wq"), d, d, rng)?,
                wk: Linear::new(store, &format!("{p}.attn.wk"), d, d, rng)?,
                wv: Linear::new(store, &format!("{p}.attn.wv"), d, d, rng)?,
                wo: Linear::new(store, &format!("{p}.attn.wo"), d, d, rng)?,
                ln2: LayerNorm::new(store, &format!("{p}.ln2"), d, rng)?,
                ff1: Linear::new(store, &format!("{p}.ffn.w1"), d, f, rng)?,
                ff2: Linear::new(store, &format!("{p}.ffn.w2"), f, d, rng)?,
            });
        }
        Ok(AttentionBlock { config, layers })
    }

    /// Every parameter id of the block, in registration order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            ids.extend([l.ln1.gamma, l.ln1.beta]);
            for lin in [l.wq, l.wk, l.wv, l.wo] {
                ids.extend([lin.w, lin.b]);
            }
            ids.extend([l.ln2.gamma, l.ln2.beta]);
            for lin in [l.ff1, l.ff2] {
                ids.extend([lin.w, lin.b]);
            }
        }
        ids
    }

    /// Runs the block over `x` (`[T, d]`).
    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var) -> Var {
        self.run(ctx, x, None)
    }

    /// Like [`forward`](Self::forward) but the last layer only computes the
    /// rows in `read`, returned as a `[read.len(), d]` matrix. Each row is
    /// bit-identical to the same row of the full output.
    pub fn forward_rows<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var, read: &[usize]) -> Var {
        self.run(ctx, x, Some(read))
    }

    fn run<F: Real>(&self, ctx: &mut Ctx<'_, F>, x: Var, read: Option<&[usize]>) -> Var {
        let heads = self.config.heads;
        let mut h = x;
        if self.layers.is_empty() {
            return match read {
                Some(r) => ctx.gather(h, r),
                None => h,
            };
        }
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let normed = layer.ln1.forward(ctx, h);
            let k = layer.wk.forward(ctx, normed);
            let v = layer.wv.forward(ctx, normed);
            let (q_in, resid) = match read {
                Some(r) if i == last => (ctx.gather(normed, r), ctx.gather(h, r)),
                _ => (normed, h),
            };
            let q = layer.wq.forward(ctx, q_in);
            let att = ctx.attention(q, k, v, heads);
            let proj = layer.wo.forward(ctx, att);
            let h1 = ctx.add(resid, proj);
            let n2 = layer.ln2.forward(ctx, h1);
            let f1 = layer.ff1.forward(ctx, n2);
            let f1 = ctx.gelu(f1);
            let f2 = layer.ff2.forward(ctx, f1);
            h = ctx.add(h1, f2);
        }
        h
    }
}

/// Single-direction LSTM layer; gate order `i, f, g, o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w_ih = store.add(&format!("{name}.w_ih"), &[input, 4 * hidden], Init::Xavier, rng)?;
        let w_hh = store.add(&format!("{name}.w_hh"), &[hidden, 4 * hidden], Init::Xavier, rng)?;
        let mut bias = alloc::vec![F::zero(); 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|x| *x = F::one());
        let b = store.insert(&format!("{name}.b"), Tensor::vector(bias))?;
        Ok(LstmLayer { w_ih, w_hh, b, hidden })
    }

    /// Hidden states aligned with input positions; `reverse` reads right to left.
    pub fn forward<F: Real>(&self, ctx: &mut Ctx<'_, F>, inputs: Var, reverse: bool) -> Vec<Var> {
        let n = ctx.value(inputs).rows();
        let hd = self.hidden;
        let w_ih = ctx.param(self.w_ih);
        let w_hh = ctx.param(self.w_hh);
        let b = ctx.param(self.b);
        let projected = ctx.affine(inputs, w_ih, b);
        let mut h = ctx.constant(Tensor::zeros(&[hd]));
        let mut c = ctx.constant(Tensor::zeros(&[hd]));
        let mut out = alloc::vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let xt = ctx.row(projected, t);
            let rec = ctx.matmul(h, w_hh);
            let gates = ctx.add(xt, rec);
            let i = ctx.slice_cols(gates, 0, hd);
            let i = ctx.sigmoid(i);
            let f = ctx.slice_cols(gates, hd, hd);
            let f = ctx.sigmoid(f);
            let g = ctx.slice_cols(gates, 2 * hd, hd);
            let g = ctx.tanh(g);
            let o = ctx.slice_cols(gates, 3 * hd, hd);
            let o = ctx.sigmoid(o);
            let fc = ctx.mul(f, c);
            let ig = ctx.mul(i, g);
            c = ctx.add(fc, ig);
            let tc = ctx.tanh(c);
            h = ctx.mul(o, tc);
            out[t] = h;
        }
        out
    }
}
