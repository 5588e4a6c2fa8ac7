//! Reverse region-entity annotation toolkit.

pub mod assembly;
pub mod codes;
pub mod config;
pub mod eval;
pub mod filter;
pub mod ingest;
pub mod kb;
pub mod mask;
pub mod par;
pub mod pipeline;
pub mod reference;
pub mod review;
