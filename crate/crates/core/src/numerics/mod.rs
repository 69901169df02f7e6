//! Minimal differentiable tensor backend.
//!
//! Values are dense row-major tensors of rank 0, 1 or 2. Forward operations
//! are recorded on a [`Tape`]; [`Tape::backward`] walks the tape in reverse and
//! accumulates parameter gradients into a [`Gradients`] buffer. Every reduction
//! runs in a fixed left-to-right order so forward and backward results are
//! bit-reproducible.

mod func;
mod gradcheck;
mod nn;
mod params;
mod real;
pub mod reference;
mod tape;
mod tensor;

pub use func::{log_sum_exp, log_sum_exp_slice, softmax_stable};
pub use gradcheck::{gradcheck, GradcheckReport, GroupReport};
pub use nn::{AttentionBlock, BlockConfig, EncoderLayer, LayerNorm, Linear, LstmLayer, Mlp};
pub use params::{Gradients, Init, ParamId, ParamStore, Parameter};
pub use real::{DType, Real};
pub use tape::{Ctx, Tape, Var};
pub use tensor::Tensor;
