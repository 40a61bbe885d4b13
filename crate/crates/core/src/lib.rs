pub mod datasets;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod recognition;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, Scalar, Tensor};
