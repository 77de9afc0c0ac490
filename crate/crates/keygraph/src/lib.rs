//! Keyphrase extraction with a proximity word-graph encoder and a
//! diversity-aware pointer decoder.
//!
//! Documents become complete directed word graphs whose nodes are
//! stemmed words and whose edge weights decay with token distance. A
//! stack of gated graph convolutions encodes the nodes, and a pointer
//! decoder with hard coverage counts and a context-modification state
//! emits a ranked, de-duplicated list of keyphrases via per-phrase beam
//! search. The crate also ships the training loop, ranked-retrieval
//! metrics, a Tf-Idf baseline, and corpus / checkpoint IO.

pub mod beam;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod porter;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
