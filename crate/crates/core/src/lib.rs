//! Binomial-flow discrete diffusion on count data.

pub mod cli;
pub mod denoiser;
pub mod diagnostics;
pub mod error;
pub mod likelihood;
pub mod losses;
pub mod model;
pub mod numeric;
pub mod poisson_calculus;
pub mod sampler;
pub mod targets;

pub use error::{Error, Result};
