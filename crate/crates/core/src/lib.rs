pub mod bench;
pub mod error;
pub mod image;
pub mod keycore;
pub mod metadata;
pub mod pipeline;
pub mod postcorrect;
pub mod regioncrypt;
pub mod repository;
pub mod samples;

pub use error::{Error, Result};
