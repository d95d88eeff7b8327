pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod math;
pub mod optim;
pub mod oracles;
pub mod privacy;
pub mod problem;
pub mod shuffle;

pub use error::{Error, Result};
