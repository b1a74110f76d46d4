//! Building blocks for terminology-aware retrieval benchmarks: corpus
//! filtering, chunking, terminology extraction, candidate selection, synthetic
//! query generation, translation, BEIR export, and retrieval evaluation.

pub mod artifact;
pub mod beir;
pub mod chunker;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod pipeline;
pub mod prompts;
pub mod querygen;
pub mod selector;
pub mod simulated;
pub mod terminology;
pub mod xlingual;
