//! Multimodal oncology agent (MOA) toolkit.
//!
//! The crate covers the whole path from structured patient cases to an
//! evaluation table: cohort ingestion, an LLM-style tool orchestration loop
//! (PubMed, OncoKB, web search, histology classifier) grounded in a local
//! retrieval index, report embedding, and a stratified cross-validated MLP
//! evaluation over six feature configurations.

pub mod agent;
pub mod classifier;
pub mod cohort;
pub mod config;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod http;
pub mod knowledge;
pub mod pipeline;
pub mod synthetic;
pub mod text_embed;
pub mod tools;

pub use error::{Error, Result};
