//! Reverse-mode differentiation over a recorded tape of tensor operations.

mod conv;
mod elementwise;
pub mod gradcheck;
mod graph;
mod matmul;
mod reduce;
mod shape;

pub use gradcheck::{grad_check, grad_check_entries, DEFAULT_EPS};
pub use graph::{BinaryKind, ConvSpec, Graph, PadMode, PoolKind, PoolScope, StatKind, UnaryKind, Var};
pub use reduce::STD_EPS;
pub use shape::{ResizeFactor, ResizeMode};

