//! Shared heap, per-core object caches and write buffers, and the primitive
//! cache operations that every rule is built from.

mod outcome;
mod state;

pub use outcome::FinalHeap;
pub use state::*;
