//! Measurement toolkit for identity and demographic leakage in egocentric
//! video embeddings.
//!
//! Wearable cameras never show the person wearing them, which is often read
//! as an inherent privacy shield. This crate provides the machinery to test
//! that assumption quantitatively on frame-embedding datasets: cross-view
//! retrieval tasks that try to link a wearer's ego footage to footage of
//! them (identity, scene, and synchronized-moment retrieval), demographic
//! classifiers and retrieval-augmented attacks that exploit third-person
//! views, contrastive training of small projection heads that align the two
//! views, a progressive-masking attribution tool, and a seeded synthetic
//! dataset generator so every pipeline stage can be exercised end to end
//! without real footage.
//!
//! ```no_run
//! use egoleak_core::data::{Dataset, RetrievalTask};
//! use egoleak_core::metrics::hit_rate_at_k;
//! use egoleak_core::retrieval::{run_retrieval_task, task_positives, RetrievalOptions};
//!
//! # fn main() -> egoleak_core::error::Result<()> {
//! let ds = Dataset::load_bundle(std::path::Path::new("data/demo"))?;
//! let opts = RetrievalOptions::default();
//! let rankings = run_retrieval_task(&ds, RetrievalTask::EgoToExoIdentity, None, &opts)?;
//! let positives = task_positives(&ds, RetrievalTask::EgoToExoIdentity, &opts)?;
//! let report = hit_rate_at_k(&rankings, &positives, 5)?;
//! println!("HR@5 = {:.4}", report.value);
//! # Ok(())
//! # }
//! ```

pub mod attack;
pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod report;
pub mod retrieval;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
