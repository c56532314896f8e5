//! Dynamic search with a reinforcement-learned ranker.
//!
//! A stacked-LSTM value network scores each candidate document given the
//! list ranked so far and the current query; a simulated user returns
//! per-subtopic judgments after every block of results, and the query is
//! reformulated in embedding space before the next block.

pub mod data;
pub mod embedspace;
pub mod error;
pub mod feedback;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod valuenet;

pub use error::{Error, Result};
