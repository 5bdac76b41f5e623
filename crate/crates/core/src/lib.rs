//! Deterministic curation stages for code, text and math pre-training corpora.
//!
//! Every stage consumes and produces [`corpus::DocumentRecord`]s serialized as
//! one JSON object per line. The stages are:
//!
//! - [`filters`]: language identification, rule-based rejection, quality signals
//!   and High/Medium/Low bucketing
//! - [`dedup`]: exact and MinHash-LSH fuzzy deduplication, URL overlap removal
//! - [`repo`]: import graphs and dependency-ordered repository documents
//! - [`decontam`]: n-gram benchmark contamination detection
//! - [`fim`]: fill-in-the-middle rewriting
//! - [`mixer`]: token-budget mixing across modalities and epoch planning
//!
//! [`pipeline`] wires them together behind a single configuration file.

pub mod corpus;
pub mod decontam;
pub mod dedup;
pub mod filters;
pub mod fim;
pub mod hashing;
pub mod mixer;
pub mod pipeline;
pub mod repo;

pub use corpus::{Decision, DocumentRecord, Modality, QualityBucket, SignalVector, StageStats};
