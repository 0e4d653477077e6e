pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod math;
pub mod rl;

pub use error::{Error, Result};
