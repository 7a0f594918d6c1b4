pub mod benchmark;
pub mod cli;
pub mod elevnet;
pub mod error;
pub mod evalkit;
pub mod footprint;
pub mod geodata;
pub mod nn;
pub mod remnet;
pub mod serve;
pub mod synthcity;

pub use error::{Error, Result};
