//! Collaborative inner product metric learning.
//!
//! Losses that cluster each class along a learned centerline direction while
//! keeping different classes orthogonal, together with a small MLP encoder,
//! an SGD trainer, retrieval evaluation and a synthetic multi-view benchmark.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod trainer;
pub mod vector;

pub use error::{Error, Result};
pub use vector::{cosine_distance, cosine_similarity, dot, mean_pool, norm, FeatureVector, ShapeDescriptor};
