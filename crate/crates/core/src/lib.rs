//! Client-side engine that simulates content-based attribute inference over a
//! user's posted topics and suggests persona-aligned obfuscation topics until
//! every sensitive attribute is k-indistinguishable.

pub mod corpus;
pub mod error;
pub mod fixtures;
pub mod inference;
pub mod model;
pub mod queue;
pub mod simgen;
pub mod suggest;
pub mod taxonomy;

pub use error::{Error, ErrorBody, Result};
