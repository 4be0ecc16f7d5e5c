//! Check-in corpus model and preprocessing.

mod archive;
mod cohorts;
mod ingest;
mod preprocess;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use archive::{read_archive, read_splits, write_archive, write_splits, ARCHIVE_VERSION};
pub use cohorts::{stratify_users, zero_shot_holdout, Stratum, UserCohorts};
pub use ingest::{parse_checkins, ColumnRef, Ingested, Reject, Schema, TimestampFormat};
pub use preprocess::{
    chronological_split, count_timestamp_ties, filter_sparse, preprocess, segment_trajectories,
    CorpusSplits, PreprocessParams, SplitRatios, SplitReport,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema column `{0}` not found in header")]
    MissingColumn(String),
    #[error("{path}: no valid rows ({rejected} rejected)")]
    NoValidRows { path: String, rejected: usize },
    #[error("sparse filter with min_count {min_count} left no check-ins")]
    EmptyAfterFilter { min_count: usize },
    #[error("min_count must be at least 1")]
    InvalidMinCount,
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("need at least 4 training users to stratify, found {0}")]
    TooFewUsers(usize),
    #[error("zero-shot fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("zero-shot holdout leaves no test trajectories to evaluate")]
    EmptyZeroShotEvaluation,
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("archive {path} line {line}: {reason}")]
    Archive {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoiId(pub String);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for PoiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_string())
    }
}

impl From<&str> for PoiId {
    fn from(s: &str) -> Self {
        PoiId(s.to_string())
    }
}

/// WGS84 coordinate pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self, CorpusError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(CorpusError::InvalidCoordinate(format!("lat {lat} out of range")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(CorpusError::InvalidCoordinate(format!("lon {lon} out of range")));
        }
        Ok(LatLon { lat, lon })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: PoiId,
    pub category: String,
    pub lat: f64,
    pub lon: f64,
}

impl Poi {
    pub fn location(&self) -> LatLon {
        LatLon {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

pub type PoiIndex = BTreeMap<PoiId, Poi>;

/// One visit. `timestamp` is UTC seconds; `utc_offset_min` is the local
/// offset of the venue and only affects time-of-day features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user: UserId,
    pub poi: PoiId,
    pub timestamp: i64,
    #[serde(default)]
    pub utc_offset_min: i32,
}

impl CheckIn {
    pub fn local_time(&self) -> NaiveDateTime {
        let local = self.timestamp + i64::from(self.utc_offset_min) * 60;
        DateTime::from_timestamp(local, 0)
            .map(|dt| dt.naive_utc())
            .unwrap_or_default()
    }

    /// Minute of the local day, 0..1440.
    pub fn local_minute_of_day(&self) -> u32 {
        let t = self.local_time();
        t.hour() * 60 + t.minute()
    }

    pub fn is_weekend(&self) -> bool {
        matches!(self.local_time().weekday(), Weekday::Sat | Weekday::Sun)
    }
}

/// Ingested corpus: the POI table plus check-ins in source order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub pois: PoiIndex,
    pub checkins: Vec<CheckIn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `<user>#<n>`, n counting the user's trajectories from 0.
    pub id: String,
    pub user: UserId,
    pub checkins: Vec<CheckIn>,
}

impl Trajectory {
    pub fn start(&self) -> i64 {
        self.checkins.first().map(|c| c.timestamp).unwrap_or_default()
    }

    pub fn end(&self) -> i64 {
        self.checkins.last().map(|c| c.timestamp).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.checkins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkins.is_empty()
    }
}
