//! Thematic analysis of interview transcripts with chat-completion models.
//!
//! The pipeline: load a corpus, generate initial codes per transcript,
//! aggregate them into a codebook, group codes into themes (optionally across
//! a temperature sweep), and compare themes or codes with reference material
//! through embedding similarity.

pub mod coding;
pub mod corpus;
mod error;
pub mod evaluation;
pub mod extract;
pub mod gateway;
pub mod prompting;
pub mod reporting;
pub mod theming;

pub use error::{Error, ErrorKind, Result};
