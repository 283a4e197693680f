//! Dermatology visual question answering toolkit.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod llm;
pub mod postprocess;
pub mod retrieval;
pub mod seed;
pub mod store;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
