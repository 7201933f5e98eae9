//! Toolkit for self-training speech transcription and translation models on
//! pseudo-labels: corpus manifests, scoring, density-based filtering,
//! concatenation augmentation, domain diagnostics and the round orchestrator.

pub mod augment;
pub mod corpus;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod filters;
pub mod selftrain;
pub mod text;

pub use corpus::{Corpus, CorpusRole, Provenance, Sample};
pub use error::{Error, Result};
pub use filters::{FilterMethod, FilterReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
