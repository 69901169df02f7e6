//! Full model: embeddings, CIO stack, node Transformer, MLM head, and the
//! parser that plans the chart.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chart::{Schedule, Span, SpanMap};
use crate::cio::{induce_tree, run_stack, run_tree, CioConfig, CioStack, Counters, OutsideMode};
use crate::numerics::{
    gradcheck, AttentionBlock, BlockConfig, Ctx, GradcheckReport, Gradients, Init, LayerNorm, Linear, ParamId,
    ParamStore, Real, Var,
};
use crate::pruner::{
    apply_nonsplittable, parser_nll, parser_nll_taped, plan, split_order, ParserConfig, ParserModel, SplitOrder,
    SplitScores,
};
use crate::tree::BinaryTree;
use crate::{Error, Result};

/// `ReCAT[layers, compose_depth, transformer_depth]` plus sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReCatConfig {
    pub vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub cio_layers: usize,
    pub compose_depth: usize,
    pub transformer_depth: usize,
    /// Tie inside and outside compose functions.
    pub share: bool,
    pub compat_layers: usize,
    /// Pruning threshold.
    pub prune_m: usize,
    pub mask_rate: f64,
    pub mask_id: usize,
    pub max_len: usize,
    pub tie_embeddings: bool,
    pub parser_embed_dim: usize,
    pub parser_hidden: usize,
    pub parser_layers: usize,
    pub parser_head_hidden: usize,
}

impl Default for ReCatConfig {
    fn default() -> Self {
        ReCatConfig {
            vocab: 50,
            dim: 64,
            heads: 4,
            cio_layers: 2,
            compose_depth: 1,
            transformer_depth: 2,
            share: false,
            compat_layers: 2,
            prune_m: 2,
            mask_rate: 0.15,
            mask_id: 1,
            max_len: 512,
            tie_embeddings: true,
            parser_embed_dim: 32,
            parser_hidden: 32,
            parser_layers: 1,
            parser_head_hidden: 32,
        }
    }
}

impl ReCatConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab", self.vocab),
            ("dim", self.dim),
            ("heads", self.heads),
            ("cio_layers", self.cio_layers),
            ("compose_depth", self.compose_depth),
            ("compat_layers", self.compat_layers),
            ("max_len", self.max_len),
            ("parser_embed_dim", self.parser_embed_dim),
            ("parser_hidden", self.parser_hidden),
            ("parser_layers", self.parser_layers),
            ("parser_head_hidden", self.parser_head_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.prune_m < 2 {
            return Err(Error::Config(format!("prune_m = {} must be at least 2", self.prune_m)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!("mask_rate = {} must lie in (0, 1)", self.mask_rate)));
        }
        if self.mask_id >= self.vocab {
            return Err(Error::Config(format!("mask_id {} outside vocabulary", self.mask_id)));
        }
        self.cio().validate()?;
        BlockConfig::new(self.dim, self.heads, self.transformer_depth)?;
        Ok(())
    }

    pub fn cio(&self) -> CioConfig {
        CioConfig {
            dim: self.dim,
            heads: self.heads,
            layers: self.cio_layers,
            compose_depth: self.compose_depth,
            share: self.share,
            compat_layers: self.compat_layers,
        }
    }

    pub fn parser(&self) -> ParserConfig {
        ParserConfig {
            vocab: self.vocab,
            embed_dim: self.parser_embed_dim,
            hidden: self.parser_hidden,
            layers: self.parser_layers,
            head_hidden: self.parser_head_hidden,
        }
    }
}

/// Encoder-side parameters (everything the MLM loss trains).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReCat {
    pub embed: ParamId,
    pub cio: CioStack,
    pub transformer: AttentionBlock,
    pub mlm_norm: LayerNorm,
    pub mlm_bias: ParamId,
    /// Output projection when embeddings are not tied.
    pub mlm_proj: Option<Linear>,
}

/// How the chart is built for a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    /// Parser-pruned chart.
    Pruned,
    /// Complete chart (cubic; for tests and small inputs).
    Full,
    /// The parser's tree only.
    Fast,
}

/// One training/inference sentence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<usize>,
    /// Split points that would cut through a word.
    pub nonsplittable: Vec<usize>,
}

impl Sentence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Sentence { tokens, nonsplittable: Vec::new() }
    }
}

/// Corrupted input plus the original ids at selected positions (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Masked {
    pub input: Vec<usize>,
    pub targets: Vec<(usize, usize)>,
}

impl Masked {
    pub fn unmasked(tokens: &[usize]) -> Self {
        Masked { input: tokens.to_vec(), targets: Vec::new() }
    }
}

/// Parser decision for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan<F> {
    /// Scores after word-boundary masking.
    pub scores: SplitScores<F>,
    pub order: SplitOrder,
    /// `None` in fast mode.
    pub schedule: Option<Schedule>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<F> {
    /// Contextualized node vectors in in-order (`2n - 1` rows).
    pub nodes: Vec<Vec<F>>,
    pub tree: BinaryTree,
    /// Logits for every terminal, in token order.
    pub mlm_logits: Vec<Vec<F>>,
    /// Mean cross-entropy over targets (0 without targets).
    pub mlm_loss: F,
    /// Parser NLL of the induced tree (0 in fast mode).
    pub parser_loss: F,
    pub counters: Counters,
}

/// Per-sentence loss sums and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceGrads<F> {
    /// Gradient of the summed MLM cross-entropy.
    pub model: Gradients<F>,
    /// Gradient of the parser NLL (`None` when the parser is frozen).
    pub parser: Option<Gradients<F>>,
    pub mlm_sum: F,
    pub mlm_count: usize,
    pub parser_loss: F,
    pub counters: Counters,
    pub cells: usize,
    pub inside_steps: usize,
    pub tree: BinaryTree,
}

/// Model and parser with their separate parameter stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<F> {
    pub config: ReCatConfig,
    pub model: ReCat,
    pub model_store: ParamStore<F>,
    pub parser: ParserModel,
    pub parser_store: ParamStore<F>,
}

/// Taped encoding of one sentence.
pub struct Encoded {
    pub tree: BinaryTree,
    /// `[2n - 1, d]` Transformer outputs in in-order.
    pub nodes: Var,
}

impl<F: Real> Network<F> {
    pub fn new(config: ReCatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let embed = store.add("embed", &[config.vocab, d], Init::Normal(0.05), &mut rng)?;
        let cio = CioStack::new(&mut store, config.cio(), &mut rng)?;
        let transformer = AttentionBlock::new(
            &mut store,
            "transformer",
            BlockConfig::new(d, config.heads, config.transformer_depth)?,
            &mut rng,
        )?;
        let mlm_norm = LayerNorm::new(&mut store, "mlm.norm", d, &mut rng)?;
        let mlm_bias = store.add("mlm.bias", &[config.vocab], Init::Zeros, &mut rng)?;
        let mlm_proj = if config.tie_embeddings {
            None
        } else {
            Some(Linear::new(&mut store, "mlm.proj", d, config.vocab, &mut rng)?)
        };
        let mut parser_store = ParamStore::new();
        let parser = ParserModel::new(&mut parser_store, config.parser(), &mut rng)?;
        Ok(Network {
            config,
            model: ReCat { embed, cio, transformer, mlm_norm, mlm_bias, mlm_proj },
            model_store: store,
            parser,
            parser_store,
        })
    }

    fn check_sentence(&self, s: &Sentence) -> Result<()> {
        let n = s.tokens.len();
        if n == 0 {
            return Err(Error::Input("empty sentence".into()));
        }
        if n > self.config.max_len {
            return Err(Error::Input(format!("sentence of {n} tokens exceeds max_len {}", self.config.max_len)));
        }
        if let Some(t) = s.tokens.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::Input(format!("token id {t} outside vocabulary of {}", self.config.vocab)));
        }
        Ok(())
    }

    /// Parses the unmasked sentence and builds the encoding plan.
    pub fn plan(&self, sentence: &Sentence, mode: EncodeMode) -> Result<Plan<F>> {
        self.check_sentence(sentence)?;
        let n = sentence.tokens.len();
        let raw = self.parser.score_splits(&self.parser_store, &sentence.tokens)?;
        let scores = apply_nonsplittable(&raw, &sentence.nonsplittable)?;
        let order = split_order(&scores);
        let schedule = match mode {
            EncodeMode::Pruned => Some(plan(n, self.config.prune_m, &order)?),
            EncodeMode::Full => Some(Schedule::full(n)?),
            EncodeMode::Fast => None,
        };
        Ok(Plan { scores, order, schedule })
    }

    /// Runs the CIO stack (or the tree-restricted variant) and the node
    /// Transformer on the tape.
    pub fn encode<'a>(
        &'a self,
        ctx: &mut Ctx<'a, F>,
        input: &[usize],
        plan: &Plan<F>,
        counters: &mut Counters,
    ) -> Result<Encoded> {
        let n = input.len();
        if let Some(t) = input.iter().find(|&&t| t >= self.config.vocab) {
            return Err(Error::Input(format!("token id {t} outside vocabulary of {}", self.config.vocab)));
        }
        if plan.order.n != n {
            return Err(Error::Input(format!("plan for {} tokens, input has {n}", plan.order.n)));
        }
        let table = ctx.param(self.model.embed);
        let emb = ctx.gather(table, input);
        let leaves: Vec<Var> = (0..n).map(|i| ctx.row(emb, i)).collect();
        let (tree, outside): (BinaryTree, Vec<Var>) = match &plan.schedule {
            Some(schedule) => {
                let layers = run_stack(ctx, &self.model.cio, schedule, &leaves, OutsideMode::Cumulative, counters)?;
                let last = layers.last().expect("at least one layer");
                let chart = last.to_chart(ctx.tape(), schedule)?;
                let tree = induce_tree(&chart)?;
                let outside = node_outside(&tree, &last.outside)?;
                (tree, outside)
            }
            None => {
                let tree = plan.order.tree()?;
                let layers = run_tree(ctx, &self.model.cio, &tree, &leaves, counters)?;
                let last = layers.last().expect("at least one layer");
                let outside = tree.in_order().into_iter().map(|id| last.outside[id]).collect();
                (tree, outside)
            }
        };
        let nodes = gather_and_encode(ctx, &self.model.transformer, &outside);
        Ok(Encoded { tree, nodes })
    }

    /// MLM logits for the given node rows: `LN(h) E^T + bias`
    /// (or a separate projection when embeddings are untied).
    pub fn mlm_logits(&self, ctx: &mut Ctx<'_, F>, nodes: Var, rows: &[usize]) -> Var {
        let h = ctx.gather(nodes, rows);
        let h = self.model.mlm_norm.forward(ctx, h);
        let logits = match &self.model.mlm_proj {
            None => {
                let table = ctx.param(self.model.embed);
                ctx.matmul_nt(h, table)
            }
            Some(lin) => {
                let w = ctx.param(lin.w);
                ctx.matmul(h, w)
            }
        };
        let bias = ctx.param(self.model.mlm_bias);
        let rows_n = rows.len();
        let mut rep = Vec::with_capacity(rows_n);
        for _ in 0..rows_n {
            rep.push(bias);
        }
        let b = ctx.concat_rows(&rep);
        ctx.add(logits, b)
    }

    /// Summed cross-entropy at the masked positions (`None` without targets).
    pub fn masked_loss(&self, ctx: &mut Ctx<'_, F>, nodes: Var, masked: &Masked) -> Option<Var> {
        if masked.targets.is_empty() {
            return None;
        }
        let rows: Vec<usize> = masked.targets.iter().map(|&(p, _)| 2 * p).collect();
        let ids: Vec<usize> = masked.targets.iter().map(|&(_, id)| id).collect();
        let logits = self.mlm_logits(ctx, nodes, &rows);
        Some(ctx.cross_entropy(logits, &ids))
    }

    /// Forward pass of the pretraining objective, returning values only.
    pub fn forward_pretrain(&self, sentence: &Sentence, masked: &Masked, mode: EncodeMode) -> Result<ForwardOutput<F>> {
        let plan = self.plan(sentence, mode)?;
        self.forward_with_plan(sentence, masked, &plan)
    }

    /// [`forward_pretrain`](Self::forward_pretrain) with a precomputed plan.
    pub fn forward_with_plan(&self, sentence: &Sentence, masked: &Masked, plan: &Plan<F>) -> Result<ForwardOutput<F>> {
        let n = sentence.tokens.len();
        check_masked(masked, n)?;
        let mut ctx = Ctx::new(&self.model_store);
        let mut counters = Counters::default();
        let enc = self.encode(&mut ctx, &masked.input, plan, &mut counters)?;
        let terminal_rows: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        let logits = self.mlm_logits(&mut ctx, enc.nodes, &terminal_rows);
        let lv = ctx.value(logits);
        let mlm_logits: Vec<Vec<F>> = (0..n).map(|i| lv.row(i).to_vec()).collect();
        let mlm_loss = if masked.targets.is_empty() {
            F::zero()
        } else {
            let mut total = F::zero();
            for &(pos, id) in &masked.targets {
                let row = &mlm_logits[pos];
                total += crate::numerics::log_sum_exp_slice(row) - row[id];
            }
            total / F::c(masked.targets.len() as f64)
        };
        let parser_loss = if plan.schedule.is_some() {
            parser_nll(&plan.scores.v, &SplitOrder::from_tree(&enc.tree))?
        } else {
            F::zero()
        };
        let nv = ctx.value(enc.nodes);
        let nodes = (0..nv.rows()).map(|r| nv.row(r).to_vec()).collect();
        Ok(ForwardOutput { nodes, tree: enc.tree, mlm_logits, mlm_loss, parser_loss, counters })
    }

    /// Loss sums and gradients for one sentence. The parser is trained
    /// towards the tree induced by the last CIO layer unless `mode` is fast.
    pub fn sentence_gradients(
        &self,
        sentence: &Sentence,
        masked: &Masked,
        mode: EncodeMode,
    ) -> Result<SentenceGrads<F>> {
        let n = sentence.tokens.len();
        self.check_sentence(sentence)?;
        check_masked(masked, n)?;
        let mut pctx = Ctx::new(&self.parser_store);
        let raw_var = self.parser.score_taped(&mut pctx, &sentence.tokens)?;
        let raw = SplitScores::new(raw_var.map(|v| pctx.value(v).data().to_vec()).unwrap_or_default());
        if raw.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parser logits for sentence {:?}", sentence.tokens)));
        }
        let scores = apply_nonsplittable(&raw, &sentence.nonsplittable)?;
        let order = split_order(&scores);
        let schedule = match mode {
            EncodeMode::Pruned => Some(plan(n, self.config.prune_m, &order)?),
            EncodeMode::Full => Some(Schedule::full(n)?),
            EncodeMode::Fast => None,
        };
        let (cells, inside_steps) = schedule.as_ref().map_or((n - 1, 0), |s| (s.cell_count(), s.inside_steps()));
        let pl = Plan { scores, order, schedule };

        let mut ctx = Ctx::new(&self.model_store);
        let mut counters = Counters::default();
        let enc = self.encode(&mut ctx, &masked.input, &pl, &mut counters)?;
        let (model, mlm_sum) = match self.masked_loss(&mut ctx, enc.nodes, masked) {
            None => (self.model_store.zero_gradients(), F::zero()),
            Some(loss) => {
                let value = ctx.scalar_value(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("mlm loss {value} for sentence {:?}", sentence.tokens)));
                }
                (ctx.gradients(loss)?, value)
            }
        };
        let (parser, parser_loss) = match (mode, raw_var) {
            (EncodeMode::Fast, _) | (_, None) => (None, F::zero()),
            (_, Some(v)) => {
                let target = SplitOrder::from_tree(&enc.tree);
                let v = if sentence.nonsplittable.is_empty() {
                    v
                } else {
                    let mask = pl.scores.v.iter().map(|x| if x.is_finite() { F::zero() } else { *x }).collect();
                    let mask = pctx.vector(mask);
                    pctx.add(v, mask)
                };
                let loss = parser_nll_taped(&mut pctx, v, &target)?;
                let value = pctx.scalar_value(loss);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("parser loss {value} for sentence {:?}", sentence.tokens)));
                }
                (Some(pctx.gradients(loss)?), value)
            }
        };
        let parser = match (mode, parser) {
            (EncodeMode::Fast, _) => None,
            (_, Some(g)) => Some(g),
            (_, None) => Some(self.parser_store.zero_gradients()),
        };
        Ok(SentenceGrads {
            model,
            parser,
            mlm_sum,
            mlm_count: masked.targets.len(),
            parser_loss,
            counters,
            cells,
            inside_steps,
            tree: enc.tree,
        })
    }
}

fn check_masked(masked: &Masked, n: usize) -> Result<()> {
    if masked.input.len() != n {
        return Err(Error::Input(format!("masked input has {} tokens, sentence {n}", masked.input.len())));
    }
    if let Some(&(p, _)) = masked.targets.iter().find(|&&(p, _)| p >= n) {
        return Err(Error::Input(format!("mask target at position {p} beyond sentence of {n}")));
    }
    Ok(())
}

/// Outside vectors of the tree's nodes in in-order.
pub fn node_outside(tree: &BinaryTree, outside: &SpanMap<Var>) -> Result<Vec<Var>> {
    tree.in_order()
        .into_iter()
        .map(|id| {
            let s: Span = tree.node(id).span;
            outside.get(s).copied().ok_or_else(|| Error::Structure(format!("tree node {s:?} is not in the chart")))
        })
        .collect()
}

/// Stacks the node vectors and runs the Transformer over them; no
/// positional information is added.
pub fn gather_and_encode<F: Real>(ctx: &mut Ctx<'_, F>, transformer: &AttentionBlock, nodes: &[Var]) -> Var {
    let x = ctx.concat_rows(nodes);
    transformer.forward(ctx, x)
}

/// Reporting group of a parameter: one entry per compose block, role vector,
/// compatibility MLP, Transformer layer, LSTM direction and so on.
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    let keep = match parts.as_slice() {
        ["cio", "compat", ..] => 3,
        ["cio", _, "root_outside"] => 3,
        ["cio", _, _, "block", ..] => 4,
        ["cio", _, _, _] => 4,
        ["parser", "lstm", ..] => 2,
        ["parser", l, ..] if l.starts_with("lstm") => 3,
        ["mlm", "bias"] | ["embed"] => parts.len(),
        _ => 2,
    };
    parts[..keep.min(parts.len())].join(".")
}

/// Finite-difference reports for the MLM loss (model parameters) and the
/// parser loss (parser parameters) with the encoding plan and the parser's
/// target tree held fixed.
pub fn network_gradcheck(
    net: &Network<f64>,
    sentence: &Sentence,
    masked: &Masked,
    mode: EncodeMode,
    step: f64,
    coords_per_param: usize,
    abs_floor: f64,
) -> Result<(GradcheckReport, GradcheckReport)> {
    let pl = net.plan(sentence, mode)?;
    let tree = net.forward_with_plan(sentence, masked, &pl)?.tree;
    let target = SplitOrder::from_tree(&tree);
    let model_eval = |store: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
        let mut ctx = Ctx::new(store);
        let mut counters = Counters::default();
        let enc = net.encode(&mut ctx, &masked.input, &pl, &mut counters)?;
        let loss = net
            .masked_loss(&mut ctx, enc.nodes, masked)
            .ok_or_else(|| Error::Input("gradcheck needs at least one masked position".into()))?;
        Ok((ctx.scalar_value(loss), ctx.gradients(loss)?))
    };
    let model = gradcheck(&net.model_store, model_eval, param_group, step, coords_per_param, abs_floor)?;
    let parser_eval = |store: &ParamStore<f64>| -> Result<(f64, Gradients<f64>)> {
        let mut ctx = Ctx::new(store);
        let v = net
            .parser
            .score_taped(&mut ctx, &sentence.tokens)?
            .ok_or_else(|| Error::Input("gradcheck needs at least two tokens".into()))?;
        let loss = parser_nll_taped(&mut ctx, v, &target)?;
        Ok((ctx.scalar_value(loss), ctx.gradients(loss)?))
    };
    let parser = gradcheck(&net.parser_store, parser_eval, param_group, step, coords_per_param, abs_floor)?;
    Ok((model, parser))
}
