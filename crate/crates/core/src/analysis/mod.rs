//! Exact and Monte Carlo checks of marginal agreement, minimizer
//! preservation, and the sample-complexity separation on `Z_m`.

pub mod complexity;
pub mod marginal;
pub mod minimizer;

pub use complexity::*;
pub use marginal::*;
pub use minimizer::*;
