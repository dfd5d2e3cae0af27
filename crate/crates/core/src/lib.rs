//! Group-alternating, norm-clipped discriminator training for GANs, with
//! representational-fairness auditing of the trained generators.

pub mod data;
pub mod error;
pub mod experiments;
pub mod fairness;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
