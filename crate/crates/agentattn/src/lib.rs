//! Std companion to `agentattn-core`: the `ATNS` tensor file format,
//! parameter directories, preset files, wall-clock benchmarks and the
//! `agentattn` command line.

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod params;
pub mod presets;

pub use agentattn_core as core;
pub use error::{Error, Result};
