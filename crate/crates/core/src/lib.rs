//! One-shot object localization driven by a pointing hand.
//!
//! An exemplar scene containing a pointing hand is run through a valid-padding
//! convolutional backbone. The hand's position and orientation are estimated
//! as soft distributions, which soft-select a beam-shaped attention modulation
//! map; the modulated spatial softmax localizes the pointed-at object and
//! pools its feature vector. That vector is then used as a 1×1 matched filter
//! over the features of a new scene to find the same object again.

pub mod attention;
pub mod autodiff;
pub mod error;
pub mod imageio;
pub mod model;
pub mod scenegen;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
