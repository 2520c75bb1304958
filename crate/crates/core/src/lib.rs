pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod parallel;
pub mod trainer;

pub use error::{Error, Result};
pub use parallel::Exec;
