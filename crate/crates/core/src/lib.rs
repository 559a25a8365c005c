pub mod baseline;
pub mod error;
pub mod harness;
pub mod opf;
pub mod optimization;
pub mod layered;
pub mod mpc;
pub mod plant;
pub mod sls;

pub use error::{Error, Result};
