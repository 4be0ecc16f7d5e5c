use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{CheckIn, Corpus, CorpusError, PoiId, PoiIndex, Trajectory, UserId};

/// Drops users and POIs with fewer than `min_count` check-ins, alternating
/// user and POI passes until neither removes anything.
pub fn filter_sparse(corpus: &Corpus, min_count: usize) -> Result<Corpus, CorpusError> {
    if min_count == 0 {
        return Err(CorpusError::InvalidMinCount);
    }
    let mut kept: Vec<&CheckIn> = corpus.checkins.iter().collect();
    loop {
        let before = kept.len();

        let mut per_user: HashMap<&UserId, usize> = HashMap::new();
        for c in &kept {
            *per_user.entry(&c.user).or_default() += 1;
        }
        kept.retain(|c| per_user[&c.user] >= min_count);

        let mut per_poi: HashMap<&PoiId, usize> = HashMap::new();
        for c in &kept {
            *per_poi.entry(&c.poi).or_default() += 1;
        }
        kept.retain(|c| per_poi[&c.poi] >= min_count);

        if kept.len() == before {
            break;
        }
    }
    if kept.is_empty() {
        return Err(CorpusError::EmptyAfterFilter { min_count });
    }

    let checkins: Vec<CheckIn> = kept.into_iter().cloned().collect();
    let used: BTreeSet<&PoiId> = checkins.iter().map(|c| &c.poi).collect();
    let pois = corpus
        .pois
        .iter()
        .filter(|(id, _)| used.contains(id))
        .map(|(id, p)| (id.clone(), p.clone()))
        .collect();
    Ok(Corpus { pois, checkins })
}

/// Groups check-ins per user, orders them by time (stable, so equal
/// timestamps keep input order) and starts a new trajectory whenever the
/// gap to the previous check-in exceeds `gap_hours`.
pub fn segment_trajectories(checkins: &[CheckIn], gap_hours: f64) -> Vec<Trajectory> {
    let gap_secs = gap_hours * 3600.0;
    let mut per_user: BTreeMap<&UserId, Vec<&CheckIn>> = BTreeMap::new();
    for c in checkins {
        per_user.entry(&c.user).or_default().push(c);
    }

    let mut out = Vec::new();
    for (user, mut visits) in per_user {
        visits.sort_by_key(|c| c.timestamp);
        let mut current: Vec<CheckIn> = Vec::new();
        let mut n = 0usize;
        for c in visits {
            if let Some(prev) = current.last() {
                if (c.timestamp - prev.timestamp) as f64 > gap_secs {
                    out.push(Trajectory {
                        id: format!("{user}#{n}"),
                        user: user.clone(),
                        checkins: std::mem::take(&mut current),
                    });
                    n += 1;
                }
            }
            current.push(c.clone());
        }
        if !current.is_empty() {
            out.push(Trajectory {
                id: format!("{user}#{n}"),
                user: user.clone(),
                checkins: current,
            });
        }
    }
    out
}

/// Number of consecutive check-in pairs sharing a timestamp. Such pairs
/// keep their input order; this count is surfaced in preprocessing reports.
pub fn count_timestamp_ties(trajectories: &[Trajectory]) -> usize {
    trajectories
        .iter()
        .map(|t| {
            t.checkins
                .windows(2)
                .filter(|w| w[0].timestamp == w[1].timestamp)
                .count()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.valid, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(CorpusError::InvalidRatios(format!("{self:?} has a negative part")));
        }
        if self.train <= 0.0 {
            return Err(CorpusError::InvalidRatios("train ratio must be positive".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidRatios(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub trajectories: usize,
    pub train: usize,
    pub valid_kept: usize,
    pub valid_dropped: usize,
    pub test_kept: usize,
    pub test_dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Vec<Trajectory>,
    pub valid: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    /// User -> indices into `train`, in chronological order.
    pub user_index: BTreeMap<UserId, Vec<usize>>,
    /// POIs seen in training; the candidate universe.
    pub poi_index: PoiIndex,
    pub category_set: BTreeSet<String>,
    pub report: SplitReport,
}

impl CorpusSplits {
    pub fn train_users(&self) -> impl Iterator<Item = &UserId> {
        self.user_index.keys()
    }

    pub fn user_train(&self, user: &UserId) -> impl Iterator<Item = &Trajectory> {
        self.user_index
            .get(user)
            .into_iter()
            .flatten()
            .map(move |&i| &self.train[i])
    }

    /// Rebuilds the indexes from trajectory lists, e.g. after reading an
    /// archive.
    pub fn from_parts(
        train: Vec<Trajectory>,
        valid: Vec<Trajectory>,
        test: Vec<Trajectory>,
        all_pois: &PoiIndex,
        report: SplitReport,
    ) -> Self {
        let mut user_index: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
        let mut poi_index = PoiIndex::new();
        for (i, t) in train.iter().enumerate() {
            user_index.entry(t.user.clone()).or_default().push(i);
            for c in &t.checkins {
                if let Some(p) = all_pois.get(&c.poi) {
                    poi_index.entry(c.poi.clone()).or_insert_with(|| p.clone());
                }
            }
        }
        let category_set = poi_index.values().map(|p| p.category.clone()).collect();
        CorpusSplits {
            train,
            valid,
            test,
            user_index,
            poi_index,
            category_set,
            report,
        }
    }
}

/// Global chronological cut by trajectory end time. Valid/test trajectories
/// whose user or any POI never occurs in train are dropped and counted.
pub fn chronological_split(
    mut trajectories: Vec<Trajectory>,
    pois: &PoiIndex,
    ratios: SplitRatios,
) -> Result<CorpusSplits, CorpusError> {
    ratios.validate()?;
    trajectories.sort_by(|a, b| {
        (a.end(), a.start(), &a.user, &a.id).cmp(&(b.end(), b.start(), &b.user, &b.id))
    });
    let n = trajectories.len();
    let cut = |frac: f64| ((n as f64) * frac + 1e-9).floor() as usize;
    let train_end = cut(ratios.train).min(n);
    let valid_end = cut(ratios.train + ratios.valid).clamp(train_end, n);

    let test: Vec<Trajectory> = trajectories.split_off(valid_end);
    let valid: Vec<Trajectory> = trajectories.split_off(train_end);
    let train = trajectories;

    let seen_users: BTreeSet<&UserId> = train.iter().map(|t| &t.user).collect();
    let seen_pois: BTreeSet<&PoiId> = train
        .iter()
        .flat_map(|t| t.checkins.iter().map(|c| &c.poi))
        .collect();
    let known = |t: &Trajectory| {
        seen_users.contains(&t.user) && t.checkins.iter().all(|c| seen_pois.contains(&c.poi))
    };

    let (valid_raw, test_raw) = (valid.len(), test.len());
    let valid: Vec<Trajectory> = valid.into_iter().filter(|t| known(t)).collect();
    let test: Vec<Trajectory> = test.into_iter().filter(|t| known(t)).collect();
    let report = SplitReport {
        trajectories: n,
        train: train.len(),
        valid_kept: valid.len(),
        valid_dropped: valid_raw - valid.len(),
        test_kept: test.len(),
        test_dropped: test_raw - test.len(),
    };
    Ok(CorpusSplits::from_parts(train, valid, test, pois, report))
}

/// Thresholds for [`preprocess`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessParams {
    pub min_count: usize,
    pub gap_hours: f64,
    pub ratios: SplitRatios,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            min_count: 10,
            gap_hours: 24.0,
            ratios: SplitRatios::default(),
        }
    }
}

/// Sparse filter, segmentation and split in one go. Returns the filtered
/// corpus alongside the splits.
pub fn preprocess(
    corpus: &Corpus,
    params: &PreprocessParams,
) -> Result<(Corpus, CorpusSplits), CorpusError> {
    params.ratios.validate()?;
    let filtered = filter_sparse(corpus, params.min_count)?;
    let trajectories = segment_trajectories(&filtered.checkins, params.gap_hours);
    let splits = chronological_split(trajectories, &filtered.pois, params.ratios)?;
    Ok((filtered, splits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Poi;

    fn ci(user: &str, poi: &str, t: i64) -> CheckIn {
        CheckIn {
            user: user.into(),
            poi: poi.into(),
            timestamp: t,
            utc_offset_min: 0,
        }
    }

    fn corpus(checkins: Vec<CheckIn>) -> Corpus {
        let mut pois = PoiIndex::new();
        for c in &checkins {
            pois.entry(c.poi.clone()).or_insert_with(|| Poi {
                id: c.poi.clone(),
                category: "Food".into(),
                lat: 0.0,
                lon: 0.0,
            });
        }
        Corpus { pois, checkins }
    }

    fn traj(user: &str, pois_times: &[(&str, i64)]) -> Trajectory {
        Trajectory {
            id: format!("{user}#{}", pois_times[0].1),
            user: user.into(),
            checkins: pois_times.iter().map(|(p, t)| ci(user, p, *t)).collect(),
        }
    }

    #[test]
    fn sparse_user_removed() {
        let mut rows = Vec::new();
        for i in 0..9 {
            rows.push(ci("thin", &format!("p{}", i % 2), i));
        }
        for i in 0..20 {
            rows.push(ci("a", &format!("p{}", i % 2), 100 + i));
            rows.push(ci("b", &format!("p{}", i % 2), 200 + i));
        }
        let out = filter_sparse(&corpus(rows), 10).unwrap();
        assert!(out.checkins.iter().all(|c| c.user.0 != "thin"));
        assert_eq!(out.checkins.len(), 40);
    }

    #[test]
    fn dense_corpus_is_untouched() {
        let rows: Vec<_> = (0..40)
            .map(|i| ci(["a", "b"][i % 2], ["p", "q"][(i / 2) % 2], i as i64))
            .collect();
        let c = corpus(rows);
        assert_eq!(filter_sparse(&c, 10).unwrap(), c);
    }

    #[test]
    fn cascade_removes_user_after_poi() {
        // "c" has 10 check-ins, one of them at rare POI "r" (seen once in
        // total). Dropping "r" leaves "c" with 9.
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(ci("a", "p", i));
            rows.push(ci("b", "p", 100 + i));
        }
        for i in 0..9 {
            rows.push(ci("c", "p", 200 + i));
        }
        rows.push(ci("c", "r", 300));
        let out = filter_sparse(&corpus(rows), 10).unwrap();
        assert!(out.checkins.iter().all(|c| c.user.0 != "c" && c.poi.0 != "r"));
        assert!(!out.pois.contains_key(&PoiId::from("r")));
        assert_eq!(out.checkins.len(), 20);
    }

    #[test]
    fn filter_errors() {
        let c = corpus(vec![ci("a", "p", 0)]);
        assert!(matches!(filter_sparse(&c, 0), Err(CorpusError::InvalidMinCount)));
        assert!(matches!(
            filter_sparse(&c, 10),
            Err(CorpusError::EmptyAfterFilter { min_count: 10 })
        ));
    }

    #[test]
    fn segmentation_single_session() {
        let rows = vec![ci("u", "a", 0), ci("u", "b", 3600), ci("u", "c", 7200)];
        let t = segment_trajectories(&rows, 24.0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 3);
    }

    #[test]
    fn segmentation_splits_on_long_gap() {
        let h = 3600;
        let rows = vec![
            ci("u", "a", 0),
            ci("u", "b", h),
            ci("u", "c", 31 * h),
            ci("u", "d", 33 * h),
        ];
        let t = segment_trajectories(&rows, 24.0);
        assert_eq!(t.iter().map(Trajectory::len).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(t[1].id, "u#1");
    }

    #[test]
    fn exactly_24h_gap_does_not_split() {
        let rows = vec![ci("u", "a", 0), ci("u", "b", 24 * 3600)];
        assert_eq!(segment_trajectories(&rows, 24.0).len(), 1);
    }

    #[test]
    fn interleaved_users_are_independent() {
        let rows = vec![
            ci("u", "a", 0),
            ci("v", "a", 10),
            ci("u", "b", 20),
            ci("v", "b", 30),
        ];
        let t = segment_trajectories(&rows, 24.0);
        assert_eq!(t.len(), 2);
        assert!(t.iter().all(|tr| tr.checkins.iter().all(|c| c.user == tr.user)));
    }

    #[test]
    fn ties_keep_input_order_and_are_counted() {
        let rows = vec![ci("u", "b", 5), ci("u", "a", 5), ci("u", "c", 1)];
        let t = segment_trajectories(&rows, 24.0);
        let order: Vec<_> = t[0].checkins.iter().map(|c| c.poi.0.as_str()).collect();
        assert_eq!(order, vec!["c", "b", "a"]);
        assert_eq!(count_timestamp_ties(&t), 1);
    }

    #[test]
    fn ten_trajectories_split_8_1_1() {
        let trajs: Vec<_> = (0..10).map(|i| traj("u", &[("p", i * 100)])).collect();
        let pois = corpus(vec![ci("u", "p", 0)]).pois;
        let s = chronological_split(trajs, &pois, SplitRatios::default()).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s.test[0].end(), 900);
    }

    #[test]
    fn unseen_poi_in_test_is_dropped() {
        let mut trajs: Vec<_> = (0..9).map(|i| traj("u", &[("p", i * 100)])).collect();
        trajs.push(traj("u", &[("p", 1000), ("new", 1100)]));
        let pois = corpus(vec![ci("u", "p", 0), ci("u", "new", 0)]).pois;
        let s = chronological_split(trajs, &pois, SplitRatios::default()).unwrap();
        assert_eq!(s.test.len(), 0);
        assert_eq!(s.report.test_dropped, 1);
        assert!(!s.poi_index.contains_key(&PoiId::from("new")));
    }

    #[test]
    fn invalid_ratios() {
        let bad = SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.2,
        };
        assert!(matches!(
            chronological_split(vec![], &PoiIndex::new(), bad),
            Err(CorpusError::InvalidRatios(_))
        ));
    }
}
