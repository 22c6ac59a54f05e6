//! Actions, traces and the orders derived from them.

mod action;
mod order;

pub use action::*;
pub use order::{positions_tied, OrderError, Orders, SwEdge, SwKind};
