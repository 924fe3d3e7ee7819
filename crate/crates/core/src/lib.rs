pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod train;

pub use error::{Error, Result};
