mod common;

use std::collections::BTreeSet;

use common::Fixture;
use trailcast::corpus::{
    filter_sparse, read_archive, read_splits, segment_trajectories, write_archive, write_splits,
    CheckIn, UserId,
};

#[test]
fn fixture_counts_match_the_generator() {
    if let Err(why) = common::check_preprocessing(&Fixture::load()) {
        panic!("{why}");
    }
}

#[test]
fn filter_is_a_fixpoint() {
    let f = Fixture::load();
    assert_eq!(filter_sparse(&f.filtered, 10).unwrap(), f.filtered);
    let users: BTreeSet<&str> = f.filtered.checkins.iter().map(|c| c.user.0.as_str()).collect();
    assert!(!users.contains("usparse"));
    assert!(!users.contains("ucasc"), "losing prare drops ucasc to nine check-ins");
    assert!(!f.filtered.pois.contains_key(&"prare".into()));
}

#[test]
fn no_leakage_into_valid_or_test() {
    let f = Fixture::load();
    for t in f.splits.valid.iter().chain(&f.splits.test) {
        assert!(f.splits.user_index.contains_key(&t.user));
        assert!(t.checkins.iter().all(|c| f.splits.poi_index.contains_key(&c.poi)));
    }
    let late: UserId = "ulate".into();
    assert!(f.splits.test.iter().all(|t| t.user != late));
    assert!(f.splits.report.test_dropped > 0);
}

#[test]
fn segmentation_reconstructs_each_user() {
    let f = Fixture::load();
    let trajectories = segment_trajectories(&f.filtered.checkins, 24.0);
    let users: BTreeSet<&UserId> = f.filtered.checkins.iter().map(|c| &c.user).collect();
    for u in users {
        let mut own: Vec<&CheckIn> = f.filtered.checkins.iter().filter(|c| &c.user == u).collect();
        own.sort_by_key(|c| c.timestamp);
        let joined: Vec<&CheckIn> = trajectories
            .iter()
            .filter(|t| &t.user == u)
            .flat_map(|t| &t.checkins)
            .collect();
        assert_eq!(joined, own);
    }
    for t in &trajectories {
        assert!(t.checkins.windows(2).all(|w| w[1].timestamp - w[0].timestamp <= 24 * 3600));
    }
    // Two u00 visits exactly a day apart share a trajectory.
    assert!(trajectories.iter().any(|t| t
        .checkins
        .windows(2)
        .any(|w| w[1].timestamp - w[0].timestamp == 24 * 3600)));
}

#[test]
fn strata_partition_training_users() {
    let f = Fixture::load();
    let c = &f.cohorts;
    let union: BTreeSet<&UserId> = c.inactive.iter().chain(&c.normal).chain(&c.active).collect();
    assert_eq!(union.len(), c.inactive.len() + c.normal.len() + c.active.len());
    assert_eq!(union, f.splits.user_index.keys().collect());
    assert_eq!((c.inactive.len(), c.normal.len(), c.active.len()), (3, 4, 3));
}

#[test]
fn archives_round_trip() {
    let f = Fixture::load();
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let splits = dir.path().join("splits.jsonl");
    write_archive(&corpus, &f.filtered).unwrap();
    write_splits(&splits, &f.splits).unwrap();
    let back = read_archive(&corpus).unwrap();
    assert_eq!(back, f.filtered);
    assert_eq!(read_splits(&splits, &back.pois).unwrap(), f.splits);
}
