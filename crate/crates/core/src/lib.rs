//! Graph-structured hyperdimensional computing for small tabular datasets.
//!
//! Parameters are encoded into hypervectors with a trainable encoder,
//! composed according to a user-declared group graph, and classified by
//! cosine retrieval against per-class prototypes.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod explain;
pub mod graph;
pub mod hdc;
pub mod kernel;
pub mod memory;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
