//! Probing toolkit for template/content structure in autoregressive
//! language models.

pub mod backend;
pub mod classifier;
pub mod datasets;
pub mod metrics;
pub mod oracle;
pub mod probe;
pub mod types;
pub mod wordseg;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
