//! Signature-conditioned dynamic VWAP execution.
//!
//! The crate covers the whole offline workflow: bar ingestion and
//! normalization ([`data`]), truncated path signatures ([`signature`]), a
//! small reverse-mode differentiation substrate ([`nn`]), the temporal
//! backbone ([`backbone`]), the conservation-exact volume allocator
//! ([`allocator`]), VWAP economics and reports ([`evaluation`]) and the
//! training protocol ([`training`]).

pub mod allocator;
pub mod backbone;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod signature;
pub mod training;

pub use error::{Error, Result};
