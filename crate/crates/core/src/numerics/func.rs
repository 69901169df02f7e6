use alloc::vec::Vec;

use super::Real;
use crate::{Error, Result};

/// Softmax computed with max subtraction.
pub fn softmax_stable<F: Real>(x: &[F]) -> Result<Vec<F>> {
    if x.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let mut total = F::zero();
    for &e in &exps {
        total += e;
    }
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// `ln(e^a + e^b)`; `-inf` is the identity, so `(-inf, -inf)` stays `-inf`.
pub fn log_sum_exp<F: Real>(a: F, b: F) -> F {
    let hi = a.max(b);
    if hi == F::neg_infinity() {
        return hi;
    }
    let lo = a.min(b);
    hi + (lo - hi).exp().ln_1p()
}

/// Stable log-sum-exp of a slice; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp_slice<F: Real>(x: &[F]) -> F {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let mut total = F::zero();
    for &v in x {
        total += (v - max).exp();
    }
    max + total.ln()
}
