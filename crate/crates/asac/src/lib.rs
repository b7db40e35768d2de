//! File formats, corpus IO and the command line around [`asac_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod report;

pub use error::{Error, Result};
