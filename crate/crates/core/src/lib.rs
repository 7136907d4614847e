//! Frequency-domain action chunking for imitation learning.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod fsutil;
pub mod policy;
pub mod run;
pub mod sampler;
pub mod trajectory;

pub use error::{Error, Result};
