//! File formats, run configuration and pipeline orchestration for the
//! `surgebma` command line. The numerics live in `surgebma-core`.

pub mod config;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::Context;
pub use surgebma_core as core;
