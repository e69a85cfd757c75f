//! Few-shot class-incremental learning with feature augmentation, proxy
//! classes and a supervised contrastive objective.
//!
//! The base session trains a small rectifier encoder on interleaved
//! original/mixed features with proxy labels, a cross-entropy head and a
//! momentum-contrast loss with a feature queue. Later sessions keep the
//! backbone frozen and only add class prototypes, which are scored by
//! pooled cosine similarity.

mod bytes;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod feataug;
pub mod losses;
pub mod numcore;
pub mod protocol;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
