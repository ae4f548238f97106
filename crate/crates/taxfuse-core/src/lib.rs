//! Region-level taxonomy adaptation and label fusion for semantic segmentation.
//!
//! The pipeline takes a coarse segmentation predicted in a *source* label
//! vocabulary, a set of class-agnostic mask proposals, and a source-to-target
//! taxonomy mapping, and reassigns each proposed region to a fine-grained
//! *target* class by comparing a multi-scale visual embedding of the region
//! against text embeddings of the candidate classes. The reassigned regions
//! are painted over a per-pixel relabeling of the coarse prediction to form a
//! pseudo-label in the target vocabulary.
//!
//! Modules follow the data flow:
//!
//! * [`label_space`]: label vocabularies, taxonomy mappings, context
//!   description sets, validation.
//! * [`encoder`]: embedding vectors and the pluggable text/vision backend
//!   trait, plus the deterministic synthetic backend used for testing.
//! * [`proposals`]: segmentation maps, RLE mask proposals, majority voting.
//! * [`text_bank`]: per-class text feature banks and their disk cache.
//! * [`visual`]: padded multi-scale crops and similarity-weighted feature
//!   aggregation.
//! * [`fusion`]: per-region classification decisions and pseudo-label
//!   rendering.
//! * [`metrics`]: confusion matrices, IoU/accuracy, known/unknown splits.
//! * [`synthetic`]: seeded scene generator with planted ground truth.

pub mod adapter;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod label_map;
pub mod label_space;
pub mod metrics;
pub mod precomputed;
pub mod proposals;
pub mod rng;
pub mod synthetic;
pub mod text_bank;
pub mod visual;

pub use error::{Error, Result};
pub use geometry::PixelBox;
pub use label_space::{ClassId, LabelSpace, TaxonomyMapping, IGNORE_ID};
