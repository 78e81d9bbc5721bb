//! Minimal differentiable computation for the drum models: 2-D tensors, a
//! reverse-mode tape, transformer layers, Adam and parameter checkpoints.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Graph, Mask, Var};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::{ParamBuilder, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
