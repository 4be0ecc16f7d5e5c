use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{cosine, EmbeddingVector, MemoryError};
use crate::corpus::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Activity,
    Location,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Activity => "activity",
            Level::Location => "location",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub level: Level,
    /// User whose failure produced the lesson.
    pub source_user: UserId,
    pub context_digest: String,
    pub prediction: String,
    pub actual: String,
    pub lesson: String,
    pub embedding: EmbeddingVector,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledTrajectory {
    pub trajectory_id: String,
    pub user: UserId,
    pub digest: String,
    pub embedding: EmbeddingVector,
}

/// Indices of the `n` keys most similar to `query`, best first.
///
/// Ordering is cosine descending, then `created_at` ascending, then insertion
/// index ascending, so equal scores replay identically.
pub fn rank_by_similarity<'a>(
    query: &EmbeddingVector,
    keys: impl IntoIterator<Item = (&'a EmbeddingVector, u64)>,
    n: usize,
) -> Result<Vec<usize>, MemoryError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut scored = keys
        .into_iter()
        .enumerate()
        .map(|(i, (e, created))| cosine(query, e).map(|s| (s, created, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| -> Ordering {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    };
    if n < scored.len() {
        scored.select_nth_unstable_by(n - 1, order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(order);
    Ok(scored.into_iter().map(|(_, _, i)| i).collect())
}

/// Append-only reflection stores plus the similar-trajectory pool.
///
/// Records are only ever pushed; nothing hands out mutable access to a
/// stored record.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: usize,
    activity: Vec<ReflectionRecord>,
    location: Vec<ReflectionRecord>,
    trajectory_pool: Vec<PooledTrajectory>,
}

impl MemoryStore {
    pub fn new(dim: usize) -> Self {
        MemoryStore {
            dim,
            activity: Vec::new(),
            location: Vec::new(),
            trajectory_pool: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self, level: Level) -> &[ReflectionRecord] {
        match level {
            Level::Activity => &self.activity,
            Level::Location => &self.location,
        }
    }

    pub fn trajectory_pool(&self) -> &[PooledTrajectory] {
        &self.trajectory_pool
    }

    pub fn is_empty(&self) -> bool {
        self.activity.is_empty() && self.location.is_empty() && self.trajectory_pool.is_empty()
    }

    /// Every user that contributed a reflection or a pooled trajectory.
    pub fn source_users(&self) -> BTreeSet<&UserId> {
        self.activity
            .iter()
            .chain(&self.location)
            .map(|r| &r.source_user)
            .chain(self.trajectory_pool.iter().map(|t| &t.user))
            .collect()
    }

    fn check(&self, e: &EmbeddingVector) -> Result<(), MemoryError> {
        if e.dim() != self.dim {
            return Err(MemoryError::DimensionMismatch {
                expected: self.dim,
                found: e.dim(),
            });
        }
        if e.norm() == 0.0 {
            return Err(MemoryError::ZeroVector);
        }
        Ok(())
    }

    pub fn push_reflection(&mut self, record: ReflectionRecord) -> Result<(), MemoryError> {
        self.check(&record.embedding)?;
        if record.lesson.trim().is_empty() {
            return Err(MemoryError::EmptyLesson);
        }
        match record.level {
            Level::Activity => self.activity.push(record),
            Level::Location => self.location.push(record),
        }
        Ok(())
    }

    pub fn push_trajectory(&mut self, item: PooledTrajectory) -> Result<(), MemoryError> {
        self.check(&item.embedding)?;
        self.trajectory_pool.push(item);
        Ok(())
    }

    /// The `n` reflections of `level` closest to `query`.
    pub fn retrieve_top_n(
        &self,
        query: &EmbeddingVector,
        level: Level,
        n: usize,
    ) -> Result<Vec<&ReflectionRecord>, MemoryError> {
        let records = self.records(level);
        let idx = rank_by_similarity(
            query,
            records.iter().map(|r| (&r.embedding, r.created_at)),
            n,
        )?;
        Ok(idx.into_iter().map(|i| &records[i]).collect())
    }

    /// The `n` pooled trajectories closest to `query`, in pool order on ties.
    pub fn retrieve_similar(
        &self,
        query: &EmbeddingVector,
        n: usize,
    ) -> Result<Vec<&PooledTrajectory>, MemoryError> {
        let idx = rank_by_similarity(
            query,
            self.trajectory_pool.iter().map(|t| (&t.embedding, 0)),
            n,
        )?;
        Ok(idx.into_iter().map(|i| &self.trajectory_pool[i]).collect())
    }
}
