use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::FeatureError;
use crate::corpus::{CheckIn, PoiId, PoiIndex};

/// Visit counts per lat/lon grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPreference {
    pub cell_size_deg: f64,
    pub cells: BTreeMap<(i64, i64), usize>,
}

/// Floor of `value / cell`, snapping values that sit on a cell boundary up
/// to rounding error onto that boundary.
fn cell_index(value: f64, cell: f64) -> i64 {
    let q = value / cell;
    let r = q.round();
    if (q - r).abs() < 1e-9 {
        r as i64
    } else {
        q.floor() as i64
    }
}

impl SpatialPreference {
    pub fn cell_of(&self, lat: f64, lon: f64) -> (i64, i64) {
        (cell_index(lat, self.cell_size_deg), cell_index(lon, self.cell_size_deg))
    }

    /// Cells by visit count descending, then cell id.
    pub fn ranked(&self) -> Vec<((i64, i64), usize)> {
        let mut v: Vec<_> = self.cells.iter().map(|(k, n)| (*k, *n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

impl fmt::Display for SpatialPreference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.cells.is_empty() {
            return writeln!(f, "(no visits)");
        }
        let s = self.cell_size_deg;
        for ((r, c), n) in self.ranked() {
            writeln!(
                f,
                "- area [{:.4}, {:.4}] x [{:.4}, {:.4}]: {}",
                r as f64 * s,
                (r + 1) as f64 * s,
                c as f64 * s,
                (c + 1) as f64 * s,
                super::visits(n)
            )?;
        }
        Ok(())
    }
}

pub fn spatial_preference<'a>(
    history: impl IntoIterator<Item = &'a CheckIn>,
    pois: &PoiIndex,
    cell_size_deg: f64,
) -> Result<SpatialPreference, FeatureError> {
    if !(cell_size_deg > 0.0 && cell_size_deg.is_finite()) {
        return Err(FeatureError::InvalidCellSize(cell_size_deg));
    }
    let mut pref = SpatialPreference {
        cell_size_deg,
        cells: BTreeMap::new(),
    };
    for c in history {
        if let Some(p) = pois.get(&c.poi) {
            *pref.cells.entry(pref.cell_of(p.lat, p.lon)).or_default() += 1;
        }
    }
    Ok(pref)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBucket {
    pub name: String,
    /// Inclusive start, minutes after local midnight.
    pub start_min: u32,
    /// Exclusive end.
    pub end_min: u32,
}

/// Half-open time-of-day buckets covering [0, 1440) without overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeBuckets(pub Vec<TimeBucket>);

impl Default for TimeBuckets {
    fn default() -> Self {
        let b = |name: &str, from: u32, to: u32| TimeBucket {
            name: name.to_string(),
            start_min: from * 60,
            end_min: to * 60,
        };
        TimeBuckets(vec![
            b("night", 0, 6),
            b("morning", 6, 12),
            b("afternoon", 12, 18),
            b("evening", 18, 24),
        ])
    }
}

impl TimeBuckets {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut expected = 0;
        for b in &self.0 {
            if b.start_min != expected {
                return Err(FeatureError::InvalidBuckets(format!(
                    "bucket {:?} starts at minute {}, expected {expected}",
                    b.name, b.start_min
                )));
            }
            if b.end_min <= b.start_min {
                return Err(FeatureError::InvalidBuckets(format!("bucket {:?} is empty", b.name)));
            }
            expected = b.end_min;
        }
        if expected != 24 * 60 {
            return Err(FeatureError::InvalidBuckets(format!(
                "buckets end at minute {expected}, not 1440"
            )));
        }
        Ok(())
    }

    /// Index of the bucket containing `minute` (assumes a valid scheme).
    pub fn bucket_of(&self, minute: u32) -> usize {
        self.0
            .iter()
            .position(|b| b.start_min <= minute && minute < b.end_min)
            .unwrap_or(self.0.len().saturating_sub(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayKind {
    Weekday,
    Weekend,
}

impl DayKind {
    pub fn of(c: &CheckIn) -> Self {
        if c.is_weekend() {
            DayKind::Weekend
        } else {
            DayKind::Weekday
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DayKind::Weekday => "weekday",
            DayKind::Weekend => "weekend",
        }
    }
}

/// POI visit counts per (time-of-day bucket, weekday/weekend); each list is
/// sorted by count descending, then POI id.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPreference {
    pub scheme: TimeBuckets,
    pub buckets: BTreeMap<(usize, DayKind), Vec<(PoiId, usize)>>,
}

impl TemporalPreference {
    pub fn bucket_name(&self, idx: usize) -> &str {
        &self.scheme.0[idx].name
    }
}

impl fmt::Display for TemporalPreference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.buckets.is_empty() {
            return writeln!(f, "(no visits)");
        }
        for ((b, day), pois) in &self.buckets {
            let list: Vec<String> = pois.iter().map(|(p, n)| format!("{p} x{n}")).collect();
            writeln!(f, "- {} {}: {}", self.bucket_name(*b), day.name(), list.join(", "))?;
        }
        Ok(())
    }
}

pub fn temporal_preference<'a>(
    history: impl IntoIterator<Item = &'a CheckIn>,
    scheme: &TimeBuckets,
) -> Result<TemporalPreference, FeatureError> {
    scheme.validate()?;
    let mut counts: BTreeMap<(usize, DayKind), BTreeMap<&PoiId, usize>> = BTreeMap::new();
    for c in history {
        let key = (scheme.bucket_of(c.local_minute_of_day()), DayKind::of(c));
        *counts.entry(key).or_default().entry(&c.poi).or_default() += 1;
    }
    let buckets = counts
        .into_iter()
        .map(|(k, m)| {
            let mut v: Vec<(PoiId, usize)> = m.into_iter().map(|(p, n)| (p.clone(), n)).collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            (k, v)
        })
        .collect();
    Ok(TemporalPreference {
        scheme: scheme.clone(),
        buckets,
    })
}
