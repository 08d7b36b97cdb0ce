//! Focal and full-range graph transformer (FFGT) at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: graphs, hop matrices, ego-nets, focal masks, virtual nodes and
//!   Laplacian positional encodings.
//! * [`autodiff`]: a small dense reverse-mode tape over `f64` tensors.
//! * [`attention`]: the compound layer mixing full-range and focal heads.
//! * [`sbm`]: the SBM-PATTERN dataset generator and its statistics.
//! * [`trainer`]: node-classification model, Adam, training loop and the
//!   focal-length ablation runner.
//! * [`gradcheck`]: finite-difference checks for every primitive and the model.

pub mod attention;
pub mod autodiff;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod sbm;
pub mod trainer;

pub use error::{Error, Result};
