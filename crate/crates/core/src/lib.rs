pub mod cluster;
pub mod decoder;
pub mod error;
pub mod grid;
pub mod io;
pub mod matching;
pub mod merge;
pub mod metrics;
pub mod ops;
pub mod resample;
pub mod taxonomy;

pub use error::{Error, Result};
