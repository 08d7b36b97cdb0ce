//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles; calling
//! [`Tape::backward`] on a scalar walks the records once in reverse order.

mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{masked_softmax_reference, Tensor};

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Table index meaning "no entry" for [`Tape::table_column`].
pub const NO_ROW: u32 = u32::MAX;
