//! Rent prediction for residential listings: listing ingestion, geocoding,
//! feature encoding, five regressors implemented from scratch, evaluation,
//! diagnostics and versioned model files.
//!
//! The guide under `book/` walks through each stage; its code blocks are
//! compiled as doctests of this crate.

pub mod boost;
pub mod cli;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod evaluate;
pub mod features;
pub mod forest;
pub mod geocode;
pub mod ingest;
pub mod linear;
pub mod model;
pub mod persist;
pub mod rng;
pub mod stats;
pub mod svr;
pub mod tree;

// Keeps the guide's snippets compiling against the current API.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
mod book_pipeline {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/features.md")]
mod book_features {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/linear.md")]
mod book_linear {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/trees.md")]
mod book_trees {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/boosting.md")]
mod book_boosting {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/svr.md")]
mod book_svr {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/diagnostics.md")]
mod book_diagnostics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/persistence.md")]
mod book_persistence {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/reproducibility.md")]
mod book_reproducibility {}
