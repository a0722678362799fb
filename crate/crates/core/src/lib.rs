pub mod cli;
pub mod dictionary;
pub mod edmd;
pub mod error;
pub mod krom;
pub mod newton;
pub mod numerics;
pub mod ocp;
pub mod plants;

pub use error::{KoopError, Result};
