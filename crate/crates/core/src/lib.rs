pub mod autograd;
pub mod cli;
pub mod error;
pub mod haze;
pub mod imageio;
pub mod network;
pub mod metrics;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use network::{ModelConfig, ParamStore, Variant};
pub use tensor::{Element, Shape, Tensor};
