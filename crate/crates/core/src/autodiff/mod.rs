//! Reverse-mode differentiation over exactly the operations the localizer
//! needs: valid convolution, 2×2 max pooling, ELU, softmax, affine maps and a
//! handful of attention reductions.

pub mod kernels;
mod params;
mod tape;

pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
