//! Random walks in partially random environments: exact annealed kernels,
//! lace-expansion coefficients and speed series, lattice Green functions,
//! and Monte Carlo speed estimators.

pub mod annealed;
pub mod cli;
pub mod config;
pub mod environment;
pub mod error;
pub mod green;
pub mod lace;
pub mod lattice;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
