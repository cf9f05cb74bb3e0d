//! Multi-slide pathology report generation and evaluation toolkit.
//!
//! The pipeline runs slide tiling, part assembly and context packing, then
//! pluggable text generation and the single-slide baselines, and finally NLG
//! scoring and the rating statistics used to compare generated findings with
//! the original report text.

pub mod raster;
pub mod seeding;
pub mod tiler;
pub mod dataset;
pub mod metrics;
pub mod stats;
pub mod packer;
pub mod generation;
pub mod baselines;
pub(crate) mod http;
