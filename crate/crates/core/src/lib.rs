pub mod container;
pub mod data;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod postprocess;
pub mod scalar;
pub mod svr;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type ModelWeights64 = nn::ModelWeights<f64>;
pub type ModelWeights32 = nn::ModelWeights<f32>;
pub type SvrModel64 = svr::SvrModel<f64>;
