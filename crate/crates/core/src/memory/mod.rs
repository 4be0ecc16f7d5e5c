//! Reflective memory: embeddings, cosine top-n retrieval, the activity and
//! location reflection stores and the similar-trajectory pool.

mod embedding;
mod persist;
mod reflect;
mod store;

use thiserror::Error;

pub use embedding::{cosine, Embedder, EmbeddingVector, HashEmbedder};
#[cfg(feature = "http")]
pub use embedding::{HttpEmbedder, HttpEmbedderConfig};
pub use persist::{load, persist, MEMORY_VERSION};
pub use reflect::{
    activity_missed, location_missed, reflect_activity, reflect_location, ReflectionCase,
    ReflectionOutcome, ACTIVITY_REFLECTION_SYSTEM, LOCATION_REFLECTION_SYSTEM,
};
pub use store::{rank_by_similarity, Level, MemoryStore, PooledTrajectory, ReflectionRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("reflection lesson is empty")]
    EmptyLesson,
    #[error("memory file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("memory file {path} has schema version {found} (expected {expected})")]
    Version {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("memory file {path} line {line}: {reason}")]
    Corrupt {
        path: String,
        line: usize,
        reason: String,
    },
}
