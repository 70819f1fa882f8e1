//! Loss, optimizer, training loop, evaluation, checkpoints and the object
//! feature store.

mod checkpoint;
mod container;
mod eval;
mod optim;
mod store;
mod trainer;

pub use checkpoint::*;
pub use container::*;
pub use eval::*;
pub use optim::*;
pub use store::*;
pub use trainer::*;
