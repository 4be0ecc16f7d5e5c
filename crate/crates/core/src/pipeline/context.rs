use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDateTime};

use super::{PipelineError, RunConfig};
use crate::corpus::{CheckIn, CorpusSplits, LatLon, PoiId, PoiIndex, UserCohorts, UserId};
use crate::features::{
    long_term_profile, spatial_preference, temporal_preference, transitions, CategoryProfile,
    DayKind, SpatialPreference, TemporalPreference, TimeBuckets, TransitionStats,
};

/// Long-term features of one user, computed once from training history.
#[derive(Debug, Clone)]
pub struct UserFeatures {
    pub long_term: CategoryProfile,
    pub spatial: SpatialPreference,
    pub temporal: TemporalPreference,
}

impl UserFeatures {
    fn build(history: &[&CheckIn], pois: &PoiIndex, config: &RunConfig) -> Result<Self, PipelineError> {
        let h = || history.iter().copied();
        Ok(UserFeatures {
            long_term: long_term_profile(h(), pois),
            spatial: spatial_preference(h(), pois, config.cell_size_deg)?,
            temporal: temporal_preference(h(), &config.time_buckets)?,
        })
    }
}

/// Corpus view shared by every step of a run.
///
/// Held-out users contribute nothing here: their long-term features are
/// empty and their trajectories are excluded from the transition and
/// category statistics.
#[derive(Debug)]
pub struct Dataset<'a> {
    pub splits: &'a CorpusSplits,
    pub cohorts: &'a UserCohorts,
    pub transitions: TransitionStats,
    pub global_profile: CategoryProfile,
    users: BTreeMap<UserId, UserFeatures>,
    empty: UserFeatures,
}

impl<'a> Dataset<'a> {
    pub fn new(
        splits: &'a CorpusSplits,
        cohorts: &'a UserCohorts,
        config: &RunConfig,
    ) -> Result<Self, PipelineError> {
        let pois = &splits.poi_index;
        let pool: Vec<_> = cohorts.pool_trajectories(splits).collect();
        let transitions = transitions(pool.iter().map(|t| t.checkins.as_slice()), pois);
        let global_profile = long_term_profile(pool.iter().flat_map(|t| &t.checkins), pois);
        let mut users = BTreeMap::new();
        for user in splits.train_users() {
            if cohorts.is_zero_shot(user) {
                continue;
            }
            let history: Vec<&CheckIn> = splits.user_train(user).flat_map(|t| &t.checkins).collect();
            users.insert(user.clone(), UserFeatures::build(&history, pois, config)?);
        }
        Ok(Dataset {
            splits,
            cohorts,
            transitions,
            global_profile,
            users,
            empty: UserFeatures::build(&[], pois, config)?,
        })
    }

    pub fn pois(&self) -> &PoiIndex {
        &self.splits.poi_index
    }

    pub fn features(&self, user: &UserId) -> &UserFeatures {
        self.users.get(user).unwrap_or(&self.empty)
    }

    pub fn category_of(&self, poi: &PoiId) -> Option<&str> {
        self.pois().get(poi).map(|p| p.category.as_str())
    }
}

pub(crate) fn local_time(timestamp: i64, utc_offset_min: i32) -> NaiveDateTime {
    DateTime::from_timestamp(timestamp + i64::from(utc_offset_min) * 60, 0)
        .map(|d| d.naive_utc())
        .unwrap_or_default()
}

fn stamp(timestamp: i64, utc_offset_min: i32) -> String {
    local_time(timestamp, utc_offset_min)
        .format("%Y-%m-%d %a %H:%M")
        .to_string()
}

/// `2012-04-03 Tue 18:05 | <poi> | <category>`, in venue-local time.
pub fn visit_line(c: &CheckIn, pois: &PoiIndex) -> String {
    let cat = pois.get(&c.poi).map_or("?", |p| p.category.as_str());
    format!("{} | {} | {}", stamp(c.timestamp, c.utc_offset_min), c.poi, cat)
}

/// Compact category sequence with time-of-day buckets, used as the text key
/// for similar-trajectory search.
pub fn trajectory_digest(checkins: &[CheckIn], pois: &PoiIndex, buckets: &TimeBuckets) -> String {
    checkins
        .iter()
        .map(|c| {
            let cat = pois.get(&c.poi).map_or("?", |p| p.category.as_str());
            let b = &buckets.0[buckets.bucket_of(c.local_minute_of_day())].name;
            format!("{b} {cat}")
        })
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// What the model knows at prediction time: who, when the next visit
/// happens, and where the user is now.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub user: UserId,
    pub timestamp: i64,
    pub utc_offset_min: i32,
    pub current_poi: PoiId,
    pub current_category: String,
    pub current_location: LatLon,
    pub user_profile: String,
}

impl Context {
    /// Context for predicting the visit at `(timestamp, utc_offset_min)`
    /// after `prefix`.
    pub fn build(
        prefix: &[CheckIn],
        timestamp: i64,
        utc_offset_min: i32,
        data: &Dataset<'_>,
    ) -> Result<Self, PipelineError> {
        let last = prefix
            .last()
            .ok_or_else(|| PipelineError::Step("empty trajectory prefix".into()))?;
        let poi = data
            .pois()
            .get(&last.poi)
            .ok_or_else(|| PipelineError::Step(format!("unknown POI {}", last.poi)))?;
        let user = last.user.clone();
        let level = if data.cohorts.is_zero_shot(&user) {
            "new user, no history"
        } else {
            data.cohorts.stratum_of(&user).map_or("unknown", |s| s.name())
        };
        let top: Vec<&str> = data.features(&user).long_term.ranked().take(3).collect();
        let top = if top.is_empty() {
            "(none)".to_string()
        } else {
            top.join(", ")
        };
        Ok(Context {
            user_profile: format!("activity level: {level}\nfavourite categories: {top}"),
            user,
            timestamp,
            utc_offset_min,
            current_poi: poi.id.clone(),
            current_category: poi.category.clone(),
            current_location: poi.location(),
        })
    }

    pub fn local_time(&self) -> NaiveDateTime {
        local_time(self.timestamp, self.utc_offset_min)
    }

    pub fn day_kind(&self) -> DayKind {
        use chrono::{Datelike, Weekday};
        match self.local_time().weekday() {
            Weekday::Sat | Weekday::Sun => DayKind::Weekend,
            _ => DayKind::Weekday,
        }
    }

    pub fn bucket(&self, buckets: &TimeBuckets) -> usize {
        use chrono::Timelike;
        let t = self.local_time();
        buckets.bucket_of(t.hour() * 60 + t.minute())
    }

    /// Human-readable block placed at the top of both prompts.
    pub fn render(&self, buckets: &TimeBuckets) -> String {
        format!(
            "user: {}\n{}\nprediction time: {} ({} {})\ncurrent place: {} ({})\n",
            self.user,
            self.user_profile,
            stamp(self.timestamp, self.utc_offset_min),
            buckets.0[self.bucket(buckets)].name,
            self.day_kind().name(),
            self.current_poi,
            self.current_category,
        )
    }

    /// Retrieval key for reflections: the same text is stored with every
    /// reflection and used as the query.
    pub fn digest(&self, prefix: &[CheckIn], pois: &PoiIndex, config: &RunConfig) -> String {
        let start = prefix.len().saturating_sub(config.recent_window.max(1));
        let recent: Vec<&str> = prefix[start..]
            .iter()
            .filter_map(|c| pois.get(&c.poi).map(|p| p.category.as_str()))
            .collect();
        let b = &config.time_buckets;
        format!(
            "user {} | {} | {} {} | at {} | recent: {}",
            self.user,
            self.user_profile.replace('\n', "; "),
            b.0[self.bucket(b)].name,
            self.day_kind().name(),
            self.current_category,
            recent.join(", ")
        )
    }
}
