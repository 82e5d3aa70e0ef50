pub mod augment;
pub mod autodiff;
pub mod bandit;
pub mod bo;
pub mod cli;
pub mod data;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod search;
pub mod train;

pub use error::{Error, Result};
