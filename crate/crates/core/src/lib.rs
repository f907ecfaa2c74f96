// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geom;
pub mod perception;
pub mod world;
pub mod memory;
pub mod reasoning;
pub mod engine;
pub mod eval;
pub mod io;
