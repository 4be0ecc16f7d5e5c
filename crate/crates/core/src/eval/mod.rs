//! Ranking metrics, per-cohort aggregation and report rendering.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PoiId, Stratum, UserCohorts, UserId};

pub use report::{render_report, ReportFormat};

/// Cutoffs reported for Acc@k.
pub const KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no steps fall in scope {0}")]
    EmptyScope(String),
    #[error("unknown report format {0:?} (expected table or jsonl)")]
    UnknownFormat(String),
    #[error("nothing to render")]
    NoReports,
}

/// 1-based rank of the first occurrence of `target`.
pub fn rank_of<T: PartialEq>(ranked: &[T], target: &T) -> Option<usize> {
    ranked.iter().position(|x| x == target).map(|i| i + 1)
}

/// 1 when `target` is among the first `k` entries, else 0. `k` must be at
/// least 1.
pub fn acc_at_k<T: PartialEq>(ranked: &[T], target: &T, k: usize) -> u8 {
    debug_assert!(k >= 1, "acc_at_k needs k >= 1");
    u8::from(ranked.iter().take(k).any(|x| x == target))
}

/// `1 / rank` of the first occurrence of `target`, 0 when absent.
pub fn reciprocal_rank<T: PartialEq>(ranked: &[T], target: &T) -> f64 {
    rank_of(ranked, target).map_or(0.0, |r| 1.0 / r as f64)
}

/// Scored record of one prediction step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub user: UserId,
    pub trajectory_id: String,
    /// Index of the target check-in within its trajectory.
    pub step: usize,
    pub target: PoiId,
    pub target_category: String,
    pub predicted_categories: Vec<String>,
    pub candidate_count: usize,
    pub ranking: Vec<PoiId>,
    /// 1-based rank of the target in `ranking`.
    pub rank: Option<usize>,
    /// Prediction calls made, re-asks included.
    #[serde(default)]
    pub llm_calls: u32,
    #[serde(default)]
    pub reasks: u32,
    #[serde(default)]
    pub activity_fallback: bool,
    #[serde(default)]
    pub location_fallback: bool,
    /// Number of model answers that parsed to nothing usable.
    #[serde(default)]
    pub parse_failures: u32,
    /// Set when the step could not produce a ranking at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub activity_reflected: bool,
    #[serde(default)]
    pub location_reflected: bool,
    #[serde(default)]
    pub reflections_skipped: u32,
}

impl StepOutcome {
    pub fn used_fallback(&self) -> bool {
        self.activity_fallback || self.location_fallback
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean over all steps.
    #[default]
    Micro,
    /// Mean over users of each user's step mean.
    Macro,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scope {
    pub dataset: String,
    pub split: String,
    pub cohort: String,
    pub variant: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scope: Scope,
    pub averaging: Averaging,
    pub n_steps: usize,
    pub n_users: usize,
    pub acc: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub parse_failure_rate: f64,
    pub fallback_rate: f64,
    pub error_rate: f64,
}

/// Rank counts for a set of steps; every metric is a function of this, so
/// the result does not depend on step order.
#[derive(Default)]
struct Tally {
    n: usize,
    ranks: BTreeMap<usize, usize>,
    parse_failures: usize,
    fallbacks: usize,
    errors: usize,
}

impl Tally {
    fn add(&mut self, o: &StepOutcome) {
        self.n += 1;
        if let Some(r) = o.rank {
            *self.ranks.entry(r).or_default() += 1;
        }
        self.parse_failures += usize::from(o.parse_failures > 0);
        self.fallbacks += usize::from(o.used_fallback());
        self.errors += usize::from(o.error.is_some());
    }

    fn acc(&self, k: usize) -> f64 {
        let hits: usize = self.ranks.range(..=k).map(|(_, c)| c).sum();
        hits as f64 / self.n as f64
    }

    fn mrr(&self) -> f64 {
        let sum: f64 = self.ranks.iter().map(|(r, c)| *c as f64 / *r as f64).sum();
        sum / self.n as f64
    }

    fn rate(&self, count: usize) -> f64 {
        count as f64 / self.n as f64
    }
}

/// Report over the outcomes accepted by `keep`.
pub fn aggregate_scope(
    outcomes: &[StepOutcome],
    keep: impl Fn(&StepOutcome) -> bool,
    scope: Scope,
    averaging: Averaging,
) -> Result<EvalReport, EvalError> {
    let mut all = Tally::default();
    let mut per_user: BTreeMap<&UserId, Tally> = BTreeMap::new();
    for o in outcomes.iter().filter(|o| keep(o)) {
        all.add(o);
        per_user.entry(&o.user).or_default().add(o);
    }
    if all.n == 0 {
        return Err(EvalError::EmptyScope(scope.cohort));
    }
    let (acc, mrr) = match averaging {
        Averaging::Micro => (KS.iter().map(|&k| (k, all.acc(k))).collect(), all.mrr()),
        Averaging::Macro => {
            let users = per_user.len() as f64;
            let mean = |f: &dyn Fn(&Tally) -> f64| per_user.values().map(f).sum::<f64>() / users;
            (
                KS.iter().map(|&k| (k, mean(&|t| t.acc(k)))).collect(),
                mean(&|t| t.mrr()),
            )
        }
    };
    Ok(EvalReport {
        scope,
        averaging,
        n_steps: all.n,
        n_users: per_user.len(),
        acc,
        mrr,
        parse_failure_rate: all.rate(all.parse_failures),
        fallback_rate: all.rate(all.fallbacks),
        error_rate: all.rate(all.errors),
    })
}

/// The overall report, then one per stratum and one for the zero-shot
/// cohort when `cohorts` is given. Strata without steps are left out; an
/// empty overall scope is an error.
pub fn aggregate(
    outcomes: &[StepOutcome],
    cohorts: Option<&UserCohorts>,
    base: &Scope,
    averaging: Averaging,
) -> Result<Vec<EvalReport>, EvalError> {
    let scoped = |cohort: &str| Scope {
        cohort: cohort.to_string(),
        ..base.clone()
    };
    let mut out = vec![aggregate_scope(outcomes, |_| true, scoped("all"), averaging)?];
    let Some(c) = cohorts else { return Ok(out) };
    for s in Stratum::ALL {
        match aggregate_scope(
            outcomes,
            |o| c.stratum_of(&o.user) == Some(s),
            scoped(s.name()),
            averaging,
        ) {
            Ok(r) => out.push(r),
            Err(EvalError::EmptyScope(name)) => log::info!("stratum {name} has no steps"),
            Err(e) => return Err(e),
        }
    }
    if c.zero_shot.is_some() {
        out.push(aggregate_scope(
            outcomes,
            |o| c.is_zero_shot(&o.user),
            scoped("zero_shot"),
            averaging,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn outcome(user: &str, rank: Option<usize>) -> StepOutcome {
        StepOutcome {
            user: user.into(),
            trajectory_id: format!("{user}#0"),
            step: 1,
            target: "t".into(),
            target_category: "C".into(),
            predicted_categories: vec![],
            candidate_count: 0,
            ranking: vec![],
            rank,
            llm_calls: 0,
            reasks: 0,
            activity_fallback: false,
            location_fallback: false,
            parse_failures: 0,
            error: None,
            activity_reflected: false,
            location_reflected: false,
            reflections_skipped: 0,
        }
    }

    #[test]
    fn point_metrics() {
        let r = ["a", "b", "c"];
        assert_eq!(acc_at_k(&r, &"a", 1), 1);
        assert_eq!(acc_at_k(&r, &"c", 2), 0);
        assert_eq!(acc_at_k(&r, &"c", 20), 1);
        for k in KS {
            assert_eq!(acc_at_k(&r, &"z", k), 0);
        }
        assert_eq!(reciprocal_rank(&r, &"a"), 1.0);
        assert_eq!(reciprocal_rank(&r, &"z"), 0.0);
        assert_eq!(reciprocal_rank(&["x", "a", "a"], &"a"), 0.5);
    }

    #[test]
    fn mean_reciprocal_rank_by_hand() {
        let steps = [outcome("u", Some(1)), outcome("u", Some(3)), outcome("u", None)];
        let r = aggregate_scope(&steps, |_| true, Scope::default(), Averaging::Micro).unwrap();
        assert!((r.mrr - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn acc_at_one_half() {
        let steps: Vec<_> = [Some(1), Some(2), Some(1), None]
            .into_iter()
            .map(|r| outcome("u", r))
            .collect();
        let r = aggregate_scope(&steps, |_| true, Scope::default(), Averaging::Micro).unwrap();
        assert_eq!(r.acc[&1], 0.5);
        assert_eq!(r.acc[&5], 0.75);
    }

    #[test]
    fn empty_scope_is_an_error() {
        let steps = [outcome("u", Some(1))];
        let err = aggregate_scope(&steps, |_| false, Scope { cohort: "active".into(), ..Scope::default() }, Averaging::Micro);
        assert_eq!(err, Err(EvalError::EmptyScope("active".into())));
        assert!(aggregate(&[], None, &Scope::default(), Averaging::Micro).is_err());
    }

    #[test]
    fn macro_weights_users_equally() {
        let steps = [
            outcome("a", Some(1)),
            outcome("b", None),
            outcome("b", None),
            outcome("b", None),
        ];
        let micro = aggregate_scope(&steps, |_| true, Scope::default(), Averaging::Micro).unwrap();
        let macro_ = aggregate_scope(&steps, |_| true, Scope::default(), Averaging::Macro).unwrap();
        assert_eq!(micro.acc[&1], 0.25);
        assert_eq!(macro_.acc[&1], 0.5);
        assert_eq!(macro_.n_users, 2);
    }

    #[test]
    fn cohort_reports() {
        use std::collections::BTreeSet;
        let cohorts = UserCohorts {
            inactive: BTreeSet::from(["a".into()]),
            normal: BTreeSet::from(["b".into()]),
            active: BTreeSet::from(["c".into()]),
            zero_shot: Some(BTreeSet::from(["a".into(), "b".into()])),
        };
        let steps = [outcome("a", Some(1)), outcome("b", Some(2)), outcome("b", None)];
        let reports = aggregate(&steps, Some(&cohorts), &Scope::default(), Averaging::Micro).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.scope.cohort.as_str()).collect();
        assert_eq!(names, ["all", "inactive", "normal", "zero_shot"]);
        assert_eq!(reports[2].n_steps, 2);
        assert_eq!(reports[1].acc[&1], 1.0);
    }

    fn oracle_rr(ranked: &[u8], target: u8) -> f64 {
        for (i, &r) in ranked.iter().enumerate() {
            if r == target {
                return 1.0 / (i as f64 + 1.0);
            }
        }
        0.0
    }

    proptest! {
        #[test]
        fn metrics_match_linear_scan(ranked in proptest::collection::vec(0u8..30, 0..25), target in 0u8..30, k in 1usize..25) {
            let mut hit = 0u8;
            for &r in ranked.iter().take(k) {
                if r == target { hit = 1; }
            }
            prop_assert_eq!(acc_at_k(&ranked, &target, k), hit);
            prop_assert_eq!(reciprocal_rank(&ranked, &target), oracle_rr(&ranked, target));
        }

        #[test]
        fn reports_are_order_free_and_monotone(
            ranks in proptest::collection::vec((0u8..4, proptest::option::of(1usize..30)), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let steps: Vec<StepOutcome> = ranks.iter().map(|(u, r)| outcome(&format!("u{u}"), *r)).collect();
            let mut shuffled = steps.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for avg in [Averaging::Micro, Averaging::Macro] {
                let a = aggregate_scope(&steps, |_| true, Scope::default(), avg).unwrap();
                let b = aggregate_scope(&shuffled, |_| true, Scope::default(), avg).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!(a.acc[&1] <= a.acc[&5] && a.acc[&5] <= a.acc[&10] && a.acc[&10] <= a.acc[&20]);
                prop_assert!(a.acc[&20] <= 1.0 && a.acc[&1] >= 0.0);
                prop_assert!(a.acc[&1] <= a.mrr + 1e-15 && a.mrr <= 1.0 + 1e-15);
            }
        }
    }
}
