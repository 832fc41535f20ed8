//! Population oracles and kernel estimators for zero-shot prediction.

pub mod classifier;
pub mod cme;
pub mod dependence;
pub mod discrete;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod kernel;
pub mod prompting;
pub mod rn;
pub mod rng;
pub mod scalar;
pub mod ssl;

pub use error::{Error, Result};
pub use scalar::Real;

pub type DiscreteJoint64 = discrete::DiscreteJoint<f64>;
pub type DiscreteJoint32 = discrete::DiscreteJoint<f32>;
pub type DiscreteTriple64 = discrete::DiscreteTriple<f64>;
pub type DiscreteTriple32 = discrete::DiscreteTriple<f32>;
pub type KernelSpec64 = kernel::KernelSpec<f64>;
pub type KernelSpec32 = kernel::KernelSpec<f32>;
pub type CmeModel64 = cme::CmeModel<f64>;
pub type CmeModel32 = cme::CmeModel<f32>;
pub type RidgeModel64 = cme::RidgeModel<f64>;
pub type RnModel64 = rn::RnModel<f64>;
pub type RnModel32 = rn::RnModel<f32>;
pub type CcaResult64 = dependence::CcaResult<f64>;
pub type EmbeddingBatch64 = ssl::EmbeddingBatch<f64>;
pub type EmbeddingBatch32 = ssl::EmbeddingBatch<f32>;
pub type ClassEmbeddings64 = classifier::ClassEmbeddings<f64>;
