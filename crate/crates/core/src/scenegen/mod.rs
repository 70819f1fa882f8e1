//! Synthetic pointing scenes: procedural sprites, a pointing-hand glyph,
//! exemplar scenes with distractors and paired search scenes.

mod compose;
mod dataset;
mod sprites;

pub use compose::*;
pub use dataset::*;
pub use sprites::*;
