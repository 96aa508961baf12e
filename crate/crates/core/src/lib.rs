pub mod averaging;
pub mod error;
pub mod format;
pub mod generator;
pub mod gluer;
pub mod model;
pub mod prufer;
pub mod verify;

pub use error::{Error, Result};
