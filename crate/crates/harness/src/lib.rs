//! File formats, configuration, synthetic data and the pipeline runner
//! around `filterforward-core`.

pub mod archive;
pub mod bench;
pub mod binio;
pub mod config;
pub mod costcmd;
pub mod csvio;
pub mod engine;
pub mod error;
pub mod features;
pub mod generate;
pub mod pipeline;
pub mod stream;
pub mod trainer;
pub mod weights;

pub use error::{Error, Result};
