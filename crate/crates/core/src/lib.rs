#[cfg(feature = "openblas")]
mod blas;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod index;
pub mod io;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod training;
pub mod transport;
#[cfg(all(target_arch = "x86_64", target_os = "linux", target_env = "gnu"))]
mod vmath;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instances of the generic numerical types.
pub type Histogram = transport::Histogram<f64>;
pub type SinkhornConfig = transport::SinkhornConfig<f64>;
pub type GibbsKernel = transport::GibbsKernel<f64>;
pub type CostMatrix = embedding::CostMatrix<f64>;
pub type EmbeddingMatrix = embedding::EmbeddingMatrix<f64>;
pub type DictionaryModel = training::DictionaryModel<f64>;
pub type TrainOutcome = training::TrainOutcome<f64>;

/// Single-precision instances, used for long training runs.
pub type CostMatrix32 = embedding::CostMatrix<f32>;
pub type SinkhornConfig32 = transport::SinkhornConfig<f32>;
pub type DictionaryModel32 = training::DictionaryModel<f32>;
