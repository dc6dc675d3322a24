pub mod attention;
pub mod error;
pub mod nn;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;
pub mod data;
pub mod encoding;
pub mod tokenize;
pub mod semantic;
pub mod backbone;
pub mod checkpoint;
pub mod evaluation;
pub mod head;
pub mod model;
pub mod optim;
pub mod train;
pub mod cli;
pub mod config;
