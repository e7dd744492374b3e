//! Zero-forget domain adaptation of autoencoders through sparse additive
//! modifications.

mod bytes;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod rng;
pub mod align;
pub mod data;
pub mod delta;
pub mod sam;
pub mod tensor;

pub use digest::Digest;
pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::Tensor;
