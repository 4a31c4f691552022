//! Progressive unmasking for masked diffusion training on small,
//! exactly enumerable distributions.

pub mod analysis;
pub mod chains;
pub mod config;
pub mod dist;
pub mod error;
pub mod experiments;
pub mod learner;
pub mod oracle;
pub mod plot;
pub mod policy;
pub mod rng;
pub mod sequence;

pub use error::{Error, Result};
