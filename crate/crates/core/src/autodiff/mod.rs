//! Dense `f64` tensors, a reverse-mode tape, Adam, and seeded random streams.

mod adam;
pub mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{Binding, ParamId, ParamStore};
pub use rng::RngStream;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
