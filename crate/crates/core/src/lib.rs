pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod noise;
pub mod numerics;
pub mod theory;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
