pub mod circuit;
pub mod cli;
pub mod engine;
pub mod error;
pub mod expr;
pub mod fmt;
pub mod grid;
pub mod kernels;
pub mod riemann;
pub mod solve;
pub mod sum;

pub use error::{Error, Result};
