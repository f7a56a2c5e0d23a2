pub mod concave;
pub mod divergence;
pub mod error;
pub mod hypothesis;
pub mod kernel;
pub mod projection;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
