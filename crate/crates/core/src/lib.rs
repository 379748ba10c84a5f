//! Frog models on rooted d-ary trees: simulators, the loop-erasure coupling,
//! the P/Q polynomial families and the generating-function operator, plus
//! statistical suites that check the identities connecting them.

pub mod error;
pub mod params;
pub mod operator;
pub mod polynomials;
pub mod frogsim;
pub mod rng;
pub mod stats;
pub mod verify;
pub mod walks;

pub use error::{Error, Result};
pub use params::{AffineMap, ModelParams};
