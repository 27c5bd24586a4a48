pub mod cli;
pub mod compute;
pub mod corpus;
pub mod eval;
mod error;
pub mod hred;
pub mod laed;
pub mod meta;
pub mod nn;

pub use error::{Error, Result};
