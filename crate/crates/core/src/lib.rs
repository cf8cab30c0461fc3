pub mod association;
pub mod bench;
pub mod cli;
pub mod clustering;
pub mod correlation;
pub mod error;
pub mod features;
pub mod kinetics;
pub mod mpf;
pub mod similarity;
pub mod so3;
pub mod trajio;

pub use error::{Error, Result};
