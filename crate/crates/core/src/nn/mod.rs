//! Numerical substrate: arrays, the differentiation record, primitive layers
//! and the optimizer.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod spline;
pub mod tape;
pub mod tensor;

pub use optim::{adam_step, AdamConfig};
pub use params::{Parameter, ParameterStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
