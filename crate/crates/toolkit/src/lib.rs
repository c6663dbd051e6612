//! File formats, dataset handling and command implementations around
//! `spxrefine-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod image_io;
pub mod manifest;
pub mod pipeline;
pub mod synth;

pub use error::{Result, ToolkitError};
