//! Selective inference for latent group structure in linear panels.

pub mod dist;
pub mod error;
pub mod interval;
pub mod kmeans;
pub mod linalg;
pub mod panel;
pub mod selective;
pub mod sim;

pub use error::{Error, Result};
pub use interval::{Interval, IntervalUnion};
