//! Multi-query expansion for landmark photo retrieval.

pub mod artifact;
pub mod collab;
pub mod config;
pub mod corpus;
pub mod descriptors;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fisher;
pub mod kmeans;
pub mod math;
pub mod pipeline;
pub mod retrieval;
pub mod synth;
pub mod topic;

pub use error::{Error, Result};
