pub mod anomaly;
pub mod datapipe;
pub mod diffcore;
pub mod error;
pub mod nets;
pub mod priors;
pub mod rbm;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
