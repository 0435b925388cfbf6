//! Data-level pipeline for training text-embedding models on synthetic data.
//!
//! The crate covers the full data path: ODP-style topic sampling, prompt
//! rendering for task brainstorming / data synthesis / preference judging /
//! revision, dispatch to OpenAI-compatible endpoints (or a deterministic
//! offline mock), lenient JSON extraction and schema validation, corpus
//! assembly and mixing, MinHash near-duplicate removal, reference
//! implementations of the training objectives, API cost accounting, and a
//! log-linear scaling-law fit.
//!
//! Everything is seeded: a full pipeline run against the mock backend is
//! bit-reproducible given the same config.

pub mod config;
pub mod corpus;
pub mod dedup;
pub mod extract;
pub mod gateway;
pub mod ledger;
pub mod losses;
pub mod pipeline;
pub mod prompt;
pub mod scaling;
pub mod taxonomy;
