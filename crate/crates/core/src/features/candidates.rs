use std::collections::BTreeSet;
use std::fmt;

use super::{haversine, FeatureError};
use crate::corpus::{CheckIn, LatLon, Poi, PoiId, PoiIndex};

#[derive(Debug, Clone, PartialEq)]
pub struct Hop {
    pub from: PoiId,
    pub to: PoiId,
    pub distance_km: f64,
    pub elapsed_min: f64,
}

/// The last few hops of the current trajectory, most recent last.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MovementSummary {
    pub hops: Vec<Hop>,
}

impl fmt::Display for MovementSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.hops.is_empty() {
            return writeln!(f, "(no movement yet)");
        }
        for h in &self.hops {
            writeln!(
                f,
                "- {} -> {}: {:.2} km in {:.0} min",
                h.from, h.to, h.distance_km, h.elapsed_min
            )?;
        }
        Ok(())
    }
}

pub fn movement_summary(prefix: &[CheckIn], pois: &PoiIndex, window: usize) -> MovementSummary {
    let hops: Vec<Hop> = prefix
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (pois.get(&w[0].poi)?, pois.get(&w[1].poi)?);
            Some(Hop {
                from: a.id.clone(),
                to: b.id.clone(),
                distance_km: haversine(a.location(), b.location()),
                elapsed_min: (w[1].timestamp - w[0].timestamp) as f64 / 60.0,
            })
        })
        .collect();
    let start = hops.len().saturating_sub(window.max(1));
    MovementSummary {
        hops: hops[start..].to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub poi: Poi,
    pub distance_km: f64,
}

/// Candidate POIs in ascending distance from `anchor` (ties by id).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub anchor: LatLon,
    pub items: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &PoiId> {
        self.items.iter().map(|c| &c.poi.id)
    }

    pub fn contains(&self, id: &PoiId) -> bool {
        self.items.iter().any(|c| &c.poi.id == id)
    }
}

impl fmt::Display for CandidateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.items.iter().enumerate() {
            writeln!(
                f,
                "{}. {} | {} | {:.3} km",
                i + 1,
                c.poi.id,
                c.poi.category,
                c.distance_km
            )?;
        }
        Ok(())
    }
}

fn rank<'a>(anchor: LatLon, pois: impl Iterator<Item = &'a Poi>, cap: usize) -> CandidateSet {
    let mut items: Vec<Candidate> = pois
        .map(|p| Candidate {
            distance_km: haversine(anchor, p.location()),
            poi: p.clone(),
        })
        .collect();
    items.sort_by(|a, b| {
        a.distance_km
            .total_cmp(&b.distance_km)
            .then_with(|| a.poi.id.cmp(&b.poi.id))
    });
    items.truncate(cap);
    CandidateSet { anchor, items }
}

/// Training POIs whose category is among `categories`, nearest first,
/// truncated to `cap`.
pub fn build_candidates(
    anchor: LatLon,
    categories: &[String],
    pois: &PoiIndex,
    cap: usize,
) -> Result<CandidateSet, FeatureError> {
    if categories.is_empty() {
        return Err(FeatureError::NoCategories);
    }
    let wanted: BTreeSet<&str> = categories.iter().map(String::as_str).collect();
    let set = rank(
        anchor,
        pois.values().filter(|p| wanted.contains(p.category.as_str())),
        cap,
    );
    if set.is_empty() {
        return Err(FeatureError::NoCandidates);
    }
    Ok(set)
}

/// Every training POI, nearest first, truncated to `cap`.
pub fn build_all_candidates(anchor: LatLon, pois: &PoiIndex, cap: usize) -> CandidateSet {
    rank(anchor, pois.values(), cap)
}
