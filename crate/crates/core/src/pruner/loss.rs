use alloc::format;
use alloc::vec::Vec;

use super::SplitOrder;
use crate::numerics::{log_sum_exp_slice, Ctx, Real, Var};
use crate::{Error, Result};

fn check_target(n: usize, target: &SplitOrder) -> Result<()> {
    if target.n != n {
        return Err(Error::Structure(format!("target over {} tokens, logits for {n}", target.n)));
    }
    target.validate()
}

/// Negative log-likelihood of the target splits, each step normalized over
/// the split points of its enclosing span.
///
/// Logits of `-inf` mark forbidden splits (see
/// [`apply_nonsplittable`](super::apply_nonsplittable)): they drop out of the
/// normalization, and a step whose target split is forbidden contributes
/// nothing.
pub fn parser_nll<F: Real>(v: &[F], target: &SplitOrder) -> Result<F> {
    check_target(v.len() + 1, target)?;
    let mut total = F::zero();
    for step in &target.steps {
        if v[step.split - 1] == F::neg_infinity() {
            continue;
        }
        let s = step.span;
        let lse = log_sum_exp_slice(&v[s.i - 1..s.j - 1]);
        total += lse - v[step.split - 1];
    }
    Ok(total)
}

/// Taped variant of [`parser_nll`] over a `[n-1]` logits vector.
pub fn parser_nll_taped<F: Real>(ctx: &mut Ctx<'_, F>, v: Var, target: &SplitOrder) -> Result<Var> {
    check_target(ctx.value(v).numel() + 1, target)?;
    let mut terms: Vec<Var> = Vec::with_capacity(target.steps.len());
    for step in &target.steps {
        if ctx.value(v).data()[step.split - 1] == F::neg_infinity() {
            continue;
        }
        let s = step.span;
        let slice = ctx.slice_cols(v, s.i - 1, s.j - s.i);
        let lse = ctx.log_sum_exp(slice);
        let picked = ctx.element(v, step.split - 1);
        terms.push(ctx.sub(lse, picked));
    }
    if terms.is_empty() {
        return Ok(ctx.scalar(F::zero()));
    }
    Ok(ctx.add_all(&terms))
}
