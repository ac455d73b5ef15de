//! Stationary and nonstationary Poisson-process / generalized-Pareto models
//! of storm-surge exceedances, calibrated by robust adaptive Metropolis,
//! weighted by bridge-sampled marginal likelihoods and combined into
//! model-averaged return levels.
//!
//! The crate is `no_std` (it needs `alloc`); file formats and the command
//! line live in the companion `surgebma` crate.

#![no_std]
extern crate alloc;

pub mod covariates;
pub mod error;
pub mod evidence;
pub mod hazard;
pub mod math;
pub mod mle;
pub mod model;
pub mod optimize;
pub mod preprocess;
pub mod priors;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{ModelStructure, NonstationarityLevel, Param, ParameterVector};
