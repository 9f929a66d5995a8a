//! CNN training micro-engine with a model-complexity accountant and a
//! threshold-constrained architecture search.

pub mod container;
pub mod error;
pub mod gradcheck;
pub mod mnist;
pub mod model;
pub mod netspec;
pub mod ops;
pub mod rng;
pub mod search;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
