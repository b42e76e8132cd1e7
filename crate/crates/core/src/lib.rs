pub mod audio;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod text;
pub mod trainer;
pub mod traits;
pub mod video;

pub use error::{Error, Result};
