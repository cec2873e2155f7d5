pub mod archive;
pub mod cli;
pub mod config;
pub mod confident;
pub mod error;
pub mod eval;
pub mod kv;
pub mod nn;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod signal;
pub mod synth;
pub mod wavelet;

pub use error::{Error, Result};
