use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusSplits, Trajectory, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    Inactive,
    Normal,
    Active,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Inactive, Stratum::Normal, Stratum::Active];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::Inactive => "inactive",
            Stratum::Normal => "normal",
            Stratum::Active => "active",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCohorts {
    pub inactive: BTreeSet<UserId>,
    pub normal: BTreeSet<UserId>,
    pub active: BTreeSet<UserId>,
    #[serde(default)]
    pub zero_shot: Option<BTreeSet<UserId>>,
}

impl UserCohorts {
    pub fn stratum_of(&self, user: &UserId) -> Option<Stratum> {
        if self.inactive.contains(user) {
            Some(Stratum::Inactive)
        } else if self.normal.contains(user) {
            Some(Stratum::Normal)
        } else if self.active.contains(user) {
            Some(Stratum::Active)
        } else {
            None
        }
    }

    pub fn members(&self, stratum: Stratum) -> &BTreeSet<UserId> {
        match stratum {
            Stratum::Inactive => &self.inactive,
            Stratum::Normal => &self.normal,
            Stratum::Active => &self.active,
        }
    }

    pub fn is_zero_shot(&self, user: &UserId) -> bool {
        self.zero_shot.as_ref().is_some_and(|z| z.contains(user))
    }

    /// Training trajectories allowed into the similar-trajectory pool.
    pub fn pool_trajectories<'a>(
        &'a self,
        splits: &'a CorpusSplits,
    ) -> impl Iterator<Item = &'a Trajectory> + 'a {
        splits.train.iter().filter(|t| !self.is_zero_shot(&t.user))
    }

    /// Validation trajectories used to accumulate reflections.
    pub fn experience_trajectories<'a>(
        &'a self,
        splits: &'a CorpusSplits,
    ) -> impl Iterator<Item = &'a Trajectory> + 'a {
        splits.valid.iter().filter(|t| !self.is_zero_shot(&t.user))
    }

    /// Test trajectories to score: all of them, or only the held-out users'
    /// when a zero-shot cohort is set.
    pub fn evaluation_trajectories<'a>(
        &'a self,
        splits: &'a CorpusSplits,
    ) -> impl Iterator<Item = &'a Trajectory> + 'a {
        splits
            .test
            .iter()
            .filter(|t| self.zero_shot.as_ref().is_none_or(|z| z.contains(&t.user)))
    }
}

/// Ranks training users by trajectory count (ties by user id) and slices
/// bottom 30% / middle 40% / top 30%.
pub fn stratify_users(splits: &CorpusSplits) -> Result<UserCohorts, CorpusError> {
    let mut ranked: Vec<(usize, &UserId)> = splits
        .user_index
        .iter()
        .map(|(u, idx)| (idx.len(), u))
        .collect();
    if ranked.len() < 4 {
        return Err(CorpusError::TooFewUsers(ranked.len()));
    }
    ranked.sort();
    let n = ranked.len();
    let low = (n as f64 * 0.3 + 1e-9).floor() as usize;
    let high = n - low;
    let take = |range: std::ops::Range<usize>| {
        ranked[range]
            .iter()
            .map(|(_, u)| (*u).clone())
            .collect::<BTreeSet<_>>()
    };
    Ok(UserCohorts {
        inactive: take(0..low),
        normal: take(low..high),
        active: take(high..n),
        zero_shot: None,
    })
}

/// Samples `fraction` of the training users (seeded) as zero-shot users.
/// Strata are filled when there are enough users to form them.
pub fn zero_shot_holdout(
    splits: &CorpusSplits,
    fraction: f64,
    seed: u64,
) -> Result<UserCohorts, CorpusError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    let users: Vec<&UserId> = splits.user_index.keys().collect();
    let count = (users.len() as f64 * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let held: BTreeSet<UserId> = users
        .choose_multiple(&mut rng, count)
        .map(|u| (*u).clone())
        .collect();

    let mut cohorts = match stratify_users(splits) {
        Ok(c) => c,
        Err(CorpusError::TooFewUsers(_)) => UserCohorts::default(),
        Err(e) => return Err(e),
    };
    cohorts.zero_shot = Some(held);
    if !cohorts
        .evaluation_trajectories(splits)
        .any(|t| t.len() >= 2)
    {
        return Err(CorpusError::EmptyZeroShotEvaluation);
    }
    Ok(cohorts)
}
