//! Minimal differentiable tensor machinery used by every learned component.

pub mod gradcheck;
mod graph;
pub mod layers;
mod ops;
mod params;
pub mod swin;

pub use graph::{BackwardFn, Var};
pub use params::{Adam, Ctx, Param, ParamStore};
