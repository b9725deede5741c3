pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod formats;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod sim;
pub mod survey;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
