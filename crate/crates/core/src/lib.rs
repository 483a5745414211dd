//! Numeric and symbolic core of the spine reporting pipeline.

pub mod autodiff;
pub mod checkpoint;
pub mod components;
pub mod error;
pub mod gradcheck;
pub mod hog;
pub mod init;
pub mod labeling;
pub mod loss;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod params;
pub mod phantom;
pub mod report;
pub mod scalar;
pub mod segmap;
pub mod sgr;
pub mod symbolic;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

// Concrete instantiations. Training defaults to f32; gradient checks use f64.
pub type TensorF32 = tensor::Tensor<f32>;
pub type TensorF64 = tensor::Tensor<f64>;
pub type GraphF32 = autodiff::Graph<f32>;
pub type GraphF64 = autodiff::Graph<f64>;
pub type ParamStoreF32 = params::ParamStore<f32>;
pub type ParamStoreF64 = params::ParamStore<f64>;
pub type GeneratorF32 = nets::Generator<f32>;
pub type GeneratorF64 = nets::Generator<f64>;
pub type DiscriminatorF32 = nets::Discriminator<f32>;
pub type DiscriminatorF64 = nets::Discriminator<f64>;
