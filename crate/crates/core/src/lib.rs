//! Evaluation toolkit for layout-to-image generation under box overlap.
//!
//! - [`geometry`]: normalized boxes, intersection and IoU.
//! - [`annotations`]: layout records, ingestion and overlap-pair filters.
//! - [`embedding`]: caption/crop embeddings, cosine similarity, CLIP scores.
//! - [`overlayscore`]: IoU-weighted semantic overlap difficulty and bucketing.
//! - [`matching`]: Hungarian matching, mIoU, O-mIoU and judge success rates.
//! - [`losses`]: attention/amodal-mask alignment losses with gradient checks.
//! - [`reporting`]: seed aggregation and table rendering.
//!
//! Batch entry points take an [`Execution`] and run on rayon when the
//! `parallel` feature is enabled.

pub mod annotations;
pub mod embedding;
pub mod geometry;
pub mod losses;
pub mod matching;
pub mod overlayscore;
mod par;
pub mod reporting;

pub use annotations::{Difficulty, LayoutRecord};
pub use geometry::{BBox, ImageDims};
pub use par::Execution;
