pub mod data;
pub mod error;
pub mod gradcheck;
pub mod haze;
pub mod inference;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{PFFNetConfig, ParamStore};
pub use tensor::{ConvSpec, Dims, Scalar, Tensor};
