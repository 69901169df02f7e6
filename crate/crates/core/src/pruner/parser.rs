use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::SplitScores;
use crate::numerics::{Ctx, Init, LstmLayer, Mlp, ParamId, ParamStore, Real, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParserConfig {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head_hidden: usize,
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.embed_dim == 0 || self.hidden == 0 || self.layers == 0 || self.head_hidden == 0 {
            return Err(Error::Config(format!("degenerate parser config {self:?}")));
        }
        Ok(())
    }
}

/// Bidirectional LSTM split scorer with private embeddings.
///
/// Boundary `k` is scored from the forward state at token `k` and the
/// backward state at token `k+1` through a two-layer MLP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParserModel {
    pub config: ParserConfig,
    pub embed: ParamId,
    pub layers: Vec<(LstmLayer, LstmLayer)>,
    pub head: Mlp,
}

impl ParserModel {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, config: ParserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embed = store.add("parser.embed", &[config.vocab, config.embed_dim], Init::Normal(0.1), rng)?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { config.embed_dim } else { 2 * config.hidden };
            let fwd = LstmLayer::new(store, &format!("parser.lstm{l}.fwd"), input, config.hidden, rng)?;
            let bwd = LstmLayer::new(store, &format!("parser.lstm{l}.bwd"), input, config.hidden, rng)?;
            layers.push((fwd, bwd));
        }
        let head = Mlp::new(store, "parser.head", &[2 * config.hidden, config.head_hidden, 1], rng)?;
        Ok(ParserModel { config, embed, layers, head })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty sentence".into()));
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::Input(format!("token id {t} outside parser vocabulary of {}", self.config.vocab)));
        }
        Ok(())
    }

    /// Recorded boundary logits as a `[n-1]` vector; `None` when `n = 1`.
    pub fn score_taped<F: Real>(&self, ctx: &mut Ctx<'_, F>, tokens: &[usize]) -> Result<Option<Var>> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        if n == 1 {
            return Ok(None);
        }
        let table = ctx.param(self.embed);
        let mut x = ctx.gather(table, tokens);
        let mut fwd = Vec::new();
        let mut bwd = Vec::new();
        for (l, (f, b)) in self.layers.iter().enumerate() {
            fwd = f.forward(ctx, x, false);
            bwd = b.forward(ctx, x, true);
            if l + 1 < self.layers.len() {
                let rows: Vec<Var> = (0..n).map(|t| ctx.concat_cols(&[fwd[t], bwd[t]])).collect();
                x = ctx.concat_rows(&rows);
            }
        }
        let pairs: Vec<Var> = (0..n - 1).map(|k| ctx.concat_cols(&[fwd[k], bwd[k + 1]])).collect();
        let pairs = ctx.concat_rows(&pairs);
        let logits = self.head.forward(ctx, pairs);
        Ok(Some(ctx.reshape(logits, &[n - 1])))
    }

    /// Boundary logits before any constraint masking.
    pub fn score_splits<F: Real>(&self, store: &ParamStore<F>, tokens: &[usize]) -> Result<SplitScores<F>> {
        let mut ctx = Ctx::new(store);
        let v = match self.score_taped(&mut ctx, tokens)? {
            Some(var) => ctx.value(var).data().to_vec(),
            None => Vec::new(),
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parser logits {:?}", v)));
        }
        Ok(SplitScores::new(v))
    }
}
