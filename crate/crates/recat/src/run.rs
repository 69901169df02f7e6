//! Thread-parallel wrappers around the core trainer and evaluators.

use rayon::prelude::*;
use recat_core::eval::{corpus_f1, sentence_f1, BracketSet};
use recat_core::model::{EncodeMode, Masked, Network, Sentence, SentenceGrads};
use recat_core::numerics::Real;
use recat_core::train::Trainer;
use recat_core::tree::{BinaryTree, LabeledTree};
use recat_core::Result;

/// Per-sentence gradients computed on the rayon pool. Results keep input
/// order, so the trainer's reduction is unchanged by threading.
pub fn parallel_grads<F: Real>(
    trainer: &Trainer<F>,
    batch: &[&Sentence],
    masked: &[Masked],
) -> Vec<Result<SentenceGrads<F>>> {
    batch.par_iter().zip(masked.par_iter()).map(|(s, m)| trainer.sentence_gradients(s, m)).collect()
}

/// Tree induced for each sentence on unmasked input: the last CIO layer's
/// argmax tree (`Pruned`/`Full`) or the parser's tree (`Fast`).
pub fn induce_trees<F: Real>(net: &Network<F>, sentences: &[Sentence], mode: EncodeMode) -> Result<Vec<BinaryTree>> {
    sentences
        .par_iter()
        .map(|s| {
            if mode == EncodeMode::Fast {
                Ok(net.plan(s, mode)?.order.tree()?)
            } else {
                Ok(net.forward_pretrain(s, &Masked::unmasked(&s.tokens), mode)?.tree)
            }
        })
        .collect()
}

/// Mean sentence F1 of binary predictions against gold trees.
pub fn mean_f1(pred: &[BinaryTree], gold: &[LabeledTree]) -> Result<f64> {
    let pairs: Vec<(BracketSet, BracketSet)> =
        pred.iter().zip(gold).map(|(p, g)| (BracketSet::from_binary(p), BracketSet::from_labeled(g))).collect();
    corpus_f1(&pairs)
}

/// Mean F1 of uniformly random binary trees (one sample per sentence,
/// averaged over `samples` draws).
pub fn random_tree_f1(gold: &[LabeledTree], samples: usize, seed: u64) -> Result<f64> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        for g in gold {
            let t = BinaryTree::random(g.words().len(), &mut rng)?;
            total += sentence_f1(&BracketSet::from_binary(&t), &BracketSet::from_labeled(g))?;
        }
    }
    Ok(total / (samples * gold.len()) as f64)
}
