pub mod cli;
pub mod data;
pub mod decoder;
pub mod error;
pub mod loss;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::ImageTensor;
