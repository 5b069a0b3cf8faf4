//! Association and resource allocation for laser-based optical wireless
//! networks: Gaussian-beam channels, blind-interference-alignment rates, an
//! exhaustive association oracle, a dual-decomposition allocator, and a
//! small estimate-then-predict neural pipeline.

pub mod alloc;
pub mod assoc;
pub mod bia;
pub mod cli;
pub mod config;
pub mod error;
pub mod nn;
pub mod optics;
pub mod sim;

pub use error::{Error, Result};
