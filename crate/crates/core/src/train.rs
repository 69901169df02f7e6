//! Toy-scale pretraining: masking, length-bucketed batching, AdamW and the
//! joint MLM + hard-EM parser step.
//!
//! The per-sentence work ([`Trainer::sentence_gradients`]) takes `&self` so a
//! caller may fan it out over threads; [`Trainer::apply`] sums the results in
//! batch order, which keeps runs bit-reproducible regardless of scheduling.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{EncodeMode, Masked, Network, Sentence, SentenceGrads};
use crate::numerics::{Gradients, ParamStore, Real};
use crate::{Error, Result};

/// Selects each position with probability `rate`; a selected token becomes
/// `mask_id` (80%), a uniformly random non-mask id (10%) or stays (10%).
pub fn mask_tokens<R: Rng + ?Sized>(tokens: &[usize], rate: f64, mask_id: usize, vocab: usize, rng: &mut R) -> Masked {
    let mut input = tokens.to_vec();
    let mut targets = Vec::new();
    for (pos, &tok) in tokens.iter().enumerate() {
        if rng.gen::<f64>() >= rate {
            continue;
        }
        targets.push((pos, tok));
        let r: f64 = rng.gen();
        if r < 0.8 {
            input[pos] = mask_id;
        } else if r < 0.9 && vocab > 1 {
            let mut id = rng.gen_range(0..vocab - 1);
            if id >= mask_id {
                id += 1;
            }
            input[pos] = id;
        }
    }
    Masked { input, targets }
}

/// Groups sentence indices into batches of similar length. Sentences are
/// sorted by length (stable) and packed greedily; no batch exceeds `budget`
/// tokens and no sentence is split.
pub fn length_batches(lengths: &[usize], budget: usize) -> Result<Vec<Vec<usize>>> {
    if let Some((i, &len)) = lengths.iter().enumerate().find(|(_, &l)| l > budget) {
        return Err(Error::Config(format!("sentence {i} has {len} tokens, above the batch budget {budget}")));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| lengths[i]);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut used = 0;
    for i in order {
        if used + lengths[i] > budget && !current.is_empty() {
            batches.push(core::mem::take(&mut current));
            used = 0;
        }
        used += lengths[i];
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Adam with decoupled weight decay; moments are kept per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(store: &ParamStore<F>, lr: f64, config: &TrainConfig) -> Self {
        let zeros = store.zero_gradients().values;
        AdamW {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update with the learning rate multiplied by `scale`. A zero
    /// effective rate leaves the parameters untouched.
    pub fn update(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>, scale: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::c(self.beta1), F::c(self.beta2));
        let c1 = F::one() - b1.powi(t);
        let c2 = F::one() - b2.powi(t);
        let rate = self.lr * scale;
        let (lr, eps, wd) = (F::c(rate), F::c(self.eps), F::c(self.weight_decay));
        for (k, p) in store.iter_mut().enumerate() {
            let g = &grads.values[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (F::one() - b1) * g[i];
                v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
                if rate == 0.0 {
                    continue;
                }
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= lr * (mhat / (vhat.sqrt() + eps) + wd * *w);
            }
        }
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_model: f64,
    pub lr_parser: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip per parameter group (0 disables).
    pub clip_norm: f64,
    /// Linear warmup length in steps.
    pub warmup_steps: u64,
    /// Step at which the rate has decayed linearly to zero (0 keeps it
    /// constant after warmup).
    pub decay_steps: u64,
    pub epochs: usize,
    /// Maximum tokens per batch.
    pub batch_tokens: usize,
    pub seed: u64,
    /// `Pruned` (or `Full`) trains model and parser jointly; `Fast` freezes
    /// the parser and encodes along its trees.
    pub mode: EncodeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_model: 1e-3,
            lr_parser: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
            warmup_steps: 0,
            decay_steps: 0,
            epochs: 5,
            batch_tokens: 256,
            seed: 0,
            mode: EncodeMode::Pruned,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_model >= 0.0 && self.lr_parser >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("eps must be positive; weight decay and clip non-negative".into()));
        }
        if self.decay_steps != 0 && self.decay_steps <= self.warmup_steps {
            return Err(Error::Config("decay_steps must exceed warmup_steps".into()));
        }
        if self.batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Learning-rate multiplier for the update that follows `step` completed
    /// steps.
    pub fn lr_scale(&self, step: u64) -> f64 {
        let t = step + 1;
        if t <= self.warmup_steps {
            return t as f64 / self.warmup_steps as f64;
        }
        if self.decay_steps == 0 {
            return 1.0;
        }
        let left = self.decay_steps.saturating_sub(t) as f64;
        left / (self.decay_steps - self.warmup_steps) as f64
    }
}

/// Progress through the data plus the masking stream.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    /// Next batch within the current epoch.
    pub batch: usize,
    pub rng: ChaCha8Rng,
}

/// One record of the metrics stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub sentences: usize,
    pub masked: usize,
    /// Mean cross-entropy per masked token.
    pub mlm_loss: f64,
    /// Mean parser NLL per sentence.
    pub parser_loss: f64,
    pub cells_encoded: usize,
    /// Sum of inside batch counts.
    pub batches: usize,
    pub composes: usize,
    /// Filled in by the caller, which owns the clock.
    pub wall_ms: u64,
}

/// Model, parser, both optimizers and the data cursor.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<F> {
    pub net: Network<F>,
    pub config: TrainConfig,
    pub opt_model: AdamW<F>,
    pub opt_parser: AdamW<F>,
    pub state: TrainState,
}

impl<F: Real> Trainer<F> {
    pub fn new(net: Network<F>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt_model = AdamW::new(&net.model_store, config.lr_model, &config);
        let opt_parser = AdamW::new(&net.parser_store, config.lr_parser, &config);
        let state = TrainState { step: 0, epoch: 0, batch: 0, rng: ChaCha8Rng::seed_from_u64(config.seed) };
        Ok(Trainer { net, config, opt_model, opt_parser, state })
    }

    /// Batches of `epoch` in visiting order. Depends only on the lengths, the
    /// seed and the epoch, so a resumed run sees the same order.
    pub fn epoch_batches(&self, lengths: &[usize], epoch: usize) -> Result<Vec<Vec<usize>>> {
        let mut batches = length_batches(lengths, self.config.batch_tokens)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9_7f4a_7c15);
        rng.set_stream(epoch as u64);
        batches.shuffle(&mut rng);
        Ok(batches)
    }

    /// Masks a batch, consuming the training RNG in batch order.
    pub fn prepare(&mut self, batch: &[&Sentence]) -> Vec<Masked> {
        let c = &self.net.config;
        batch.iter().map(|s| mask_tokens(&s.tokens, c.mask_rate, c.mask_id, c.vocab, &mut self.state.rng)).collect()
    }

    pub fn sentence_gradients(&self, sentence: &Sentence, masked: &Masked) -> Result<SentenceGrads<F>> {
        self.net.sentence_gradients(sentence, masked, self.config.mode)
    }

    /// Sums per-sentence results in order, normalizes (MLM by masked-token
    /// count, parser by sentence count) and updates both parameter groups.
    pub fn apply(&mut self, results: Vec<SentenceGrads<F>>) -> Result<StepMetrics> {
        let mut metrics = StepMetrics {
            step: self.state.step + 1,
            epoch: self.state.epoch,
            sentences: results.len(),
            ..StepMetrics::default()
        };
        let mut g_model = self.net.model_store.zero_gradients();
        let mut g_parser = self.net.parser_store.zero_gradients();
        let mut mlm_sum = F::zero();
        let mut parser_sum = F::zero();
        for r in &results {
            if r.mlm_count > 0 {
                g_model.add_assign(&r.model);
            }
            if let Some(p) = &r.parser {
                g_parser.add_assign(p);
            }
            mlm_sum += r.mlm_sum;
            parser_sum += r.parser_loss;
            metrics.masked += r.mlm_count;
            metrics.cells_encoded += r.cells;
            metrics.batches += r.inside_steps;
            metrics.composes += r.counters.composes();
        }
        if metrics.masked > 0 {
            g_model.scale(F::one() / F::c(metrics.masked as f64));
            metrics.mlm_loss = mlm_sum.f64v() / metrics.masked as f64;
        }
        if !results.is_empty() {
            g_parser.scale(F::one() / F::c(results.len() as f64));
            metrics.parser_loss = parser_sum.f64v() / results.len() as f64;
        }
        if !g_model.is_finite() || !g_parser.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {}", metrics.step)));
        }
        clip(&mut g_model, self.config.clip_norm);
        clip(&mut g_parser, self.config.clip_norm);
        let scale = self.config.lr_scale(self.state.step);
        self.opt_model.update(&mut self.net.model_store, &g_model, scale);
        if self.config.mode != EncodeMode::Fast {
            self.opt_parser.update(&mut self.net.parser_store, &g_parser, scale);
        }
        self.state.step += 1;
        Ok(metrics)
    }

    /// Sequential forward/backward/update on one batch.
    pub fn train_step(&mut self, batch: &[&Sentence]) -> Result<StepMetrics> {
        let masked = self.prepare(batch);
        let results =
            batch.iter().zip(&masked).map(|(s, m)| self.sentence_gradients(s, m)).collect::<Result<Vec<_>>>()?;
        self.apply(results)
    }

    /// Runs from the current cursor to the end of the configured epochs, or
    /// until `max_steps` total steps. `grads` computes the per-sentence results
    /// (in input order) and lets the caller parallelize; `on_step` sees every
    /// metrics record with the trainer already advanced.
    pub fn fit<G, S>(&mut self, corpus: &[Sentence], max_steps: Option<u64>, grads: G, mut on_step: S) -> Result<()>
    where
        G: Fn(&Self, &[&Sentence], &[Masked]) -> Vec<Result<SentenceGrads<F>>>,
        S: FnMut(&mut StepMetrics, &Self) -> Result<()>,
    {
        let lengths: Vec<usize> = corpus.iter().map(|s| s.tokens.len()).collect();
        while self.state.epoch < self.config.epochs {
            let batches = self.epoch_batches(&lengths, self.state.epoch)?;
            while self.state.batch < batches.len() {
                if max_steps.is_some_and(|m| self.state.step >= m) {
                    return Ok(());
                }
                let batch: Vec<&Sentence> = batches[self.state.batch].iter().map(|&i| &corpus[i]).collect();
                let masked = self.prepare(&batch);
                let results = grads(self, &batch, &masked).into_iter().collect::<Result<Vec<_>>>()?;
                let mut metrics = self.apply(results)?;
                self.state.batch += 1;
                on_step(&mut metrics, self)?;
            }
            self.state.epoch += 1;
            self.state.batch = 0;
        }
        Ok(())
    }
}

/// Sequential gradient function for [`Trainer::fit`].
pub fn sequential_grads<F: Real>(
    trainer: &Trainer<F>,
    batch: &[&Sentence],
    masked: &[Masked],
) -> Vec<Result<SentenceGrads<F>>> {
    batch.iter().zip(masked).map(|(s, m)| trainer.sentence_gradients(s, m)).collect()
}

fn clip<F: Real>(g: &mut Gradients<F>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad_norm(g);
    if norm > max_norm {
        g.scale(F::c(max_norm / norm));
    }
}

/// Euclidean norm over every entry.
pub fn grad_norm<F: Real>(g: &Gradients<F>) -> f64 {
    let sq: f64 = g.values.iter().flatten().map(|x| x.f64v() * x.f64v()).sum();
    num_traits::Float::sqrt(sq)
}
