pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod evalkit;
pub mod fvpool;
pub mod holistic;
pub mod nn;
pub mod patchbase;
pub mod preprocess;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
