use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{CheckIn, PoiIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileWindow {
    LongTerm,
    Recent(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub category: String,
    pub count: usize,
    pub frequency: f64,
}

/// Category visit counts, sorted by count descending then name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub window: ProfileWindow,
    pub entries: Vec<CategoryCount>,
}

impl CategoryProfile {
    fn from_categories<'a>(window: ProfileWindow, cats: impl Iterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in cats {
            *counts.entry(c).or_default() += 1;
        }
        let total: usize = counts.values().sum();
        let mut entries: Vec<CategoryCount> = counts
            .into_iter()
            .map(|(category, count)| CategoryCount {
                category: category.to_string(),
                count,
                frequency: count as f64 / total as f64,
            })
            .collect();
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.category.cmp(&b.category)));
        CategoryProfile { window, entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Categories in profile order.
    pub fn ranked(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.category.as_str())
    }
}

impl fmt::Display for CategoryProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return writeln!(f, "(no visits)");
        }
        for e in &self.entries {
            writeln!(f, "- {}: {} ({:.1}%)", e.category, super::visits(e.count), e.frequency * 100.0)?;
        }
        Ok(())
    }
}

fn categories<'a>(
    checkins: impl IntoIterator<Item = &'a CheckIn>,
    pois: &'a PoiIndex,
) -> impl Iterator<Item = &'a str> {
    checkins
        .into_iter()
        .filter_map(move |c| pois.get(&c.poi).map(|p| p.category.as_str()))
}

/// Category distribution over a user's whole training history.
pub fn long_term_profile<'a>(
    history: impl IntoIterator<Item = &'a CheckIn>,
    pois: &'a PoiIndex,
) -> CategoryProfile {
    CategoryProfile::from_categories(ProfileWindow::LongTerm, categories(history, pois))
}

/// Category distribution over the last `k` check-ins of the current prefix.
pub fn recent_profile(prefix: &[CheckIn], pois: &PoiIndex, k: usize) -> CategoryProfile {
    let k = k.max(1);
    let start = prefix.len().saturating_sub(k);
    CategoryProfile::from_categories(ProfileWindow::Recent(k), categories(&prefix[start..], pois))
}

/// Category-to-category transition counts within trajectories.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionStats {
    pub counts: BTreeMap<(String, String), usize>,
    pub row_totals: BTreeMap<String, usize>,
}

impl TransitionStats {
    /// Transitions sorted by count descending, then (from, to).
    pub fn ranked(&self) -> Vec<(&str, &str, usize)> {
        let mut v: Vec<_> = self
            .counts
            .iter()
            .map(|((a, b), &n)| (a.as_str(), b.as_str(), n))
            .collect();
        v.sort_by(|x, y| y.2.cmp(&x.2).then_with(|| (x.0, x.1).cmp(&(y.0, y.1))));
        v
    }
}

impl fmt::Display for TransitionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.counts.is_empty() {
            return writeln!(f, "(no transitions)");
        }
        for (from, to, n) in self.ranked() {
            let total = self.row_totals[from];
            writeln!(f, "- {from} -> {to}: {n} of {total}")?;
        }
        Ok(())
    }
}

/// Counts consecutive category pairs inside each trajectory; pairs never
/// span a trajectory boundary.
pub fn transitions<'a>(
    trajectories: impl IntoIterator<Item = &'a [CheckIn]>,
    pois: &PoiIndex,
) -> TransitionStats {
    let mut stats = TransitionStats::default();
    for traj in trajectories {
        let cats: Vec<&str> = traj
            .iter()
            .filter_map(|c| pois.get(&c.poi).map(|p| p.category.as_str()))
            .collect();
        for w in cats.windows(2) {
            *stats
                .counts
                .entry((w[0].to_string(), w[1].to_string()))
                .or_default() += 1;
            *stats.row_totals.entry(w[0].to_string()).or_default() += 1;
        }
    }
    stats
}
