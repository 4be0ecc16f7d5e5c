//! Behavioral summaries fed into the activity and location prompts.
//!
//! Every function here is pure: the same history yields the same structure,
//! and ordering inside each structure is fully determined (counts
//! descending, then by name/id).

mod candidates;
mod geo;
mod patterns;
mod preference;

use thiserror::Error;

pub use candidates::{
    build_all_candidates, build_candidates, movement_summary, Candidate, CandidateSet, Hop,
    MovementSummary,
};
pub use geo::{haversine, EARTH_RADIUS_KM};
pub use patterns::{
    long_term_profile, recent_profile, transitions, CategoryCount, CategoryProfile, ProfileWindow,
    TransitionStats,
};
pub use preference::{
    spatial_preference, temporal_preference, DayKind, SpatialPreference, TemporalPreference,
    TimeBucket, TimeBuckets,
};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("invalid time buckets: {0}")]
    InvalidBuckets(String),
    #[error("no POI matches any predicted category")]
    NoCandidates,
    #[error("predicted category list is empty")]
    NoCategories,
}

/// `1 visit`, `3 visits`.
pub fn visits(n: usize) -> String {
    if n == 1 {
        "1 visit".into()
    } else {
        format!("{n} visits")
    }
}
