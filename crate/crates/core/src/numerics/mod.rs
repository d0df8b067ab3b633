//! Dense matrices, a reverse-mode gradient tape and the Adam optimizer.

pub mod adam;
pub mod matrix;
pub mod params;
pub mod tape;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use matrix::Matrix;
pub use params::{init_linear, ParamStore};
pub use tape::{softmax_cross_entropy, Gradients, Tape, Var};
