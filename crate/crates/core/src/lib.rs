//! Beam-measurement imputation and two-stage directed beam search for
//! distributed MIMO.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to one of them.

pub mod cgan;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod forest;
pub mod impute;
pub mod missforest;
pub mod neuralnet;
pub mod pipeline;
pub mod scalar;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Dataset64 = scenario::Dataset<f64>;
pub type Dataset32 = scenario::Dataset<f32>;
pub type MaskedSample64 = dataio::MaskedSample<f64>;
pub type MaskedDataset64 = dataio::MaskedDataset<f64>;
pub type Forest64 = forest::Forest<f64>;
pub type Forest32 = forest::Forest<f32>;
pub type RfImputer64 = forest::RfImputer<f64>;
pub type MfImputer64 = missforest::MfImputer<f64>;
pub type NetParams64 = neuralnet::NetParams<f64>;
pub type NetParams32 = neuralnet::NetParams<f32>;
pub type CganImputer64 = cgan::CganImputer<f64>;
pub type SearchOutcome64 = pipeline::SearchOutcome<f64>;
pub type ModelSet64 = pipeline::ModelSet<f64>;
pub type EvalReport64 = evaluation::EvalReport<f64>;
