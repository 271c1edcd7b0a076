//! Reverse argument-chain generation under a relevance reward, with a
//! four-stage dataset pipeline and detector evaluation.

pub mod ablation;
pub mod backends;
pub mod config;
pub mod domain;
pub mod eval;
pub mod hashing;
pub mod io;
pub mod parse;
pub mod pipeline;
pub mod prompts;
pub mod runner;
pub mod safety;
pub mod scoring;
pub mod search;
pub mod taxonomy;
pub mod text;
