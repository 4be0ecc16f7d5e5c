use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use super::context::{visit_line, Context};
use crate::corpus::{CheckIn, PoiIndex};
use crate::features::{
    CandidateSet, CategoryProfile, MovementSummary, SpatialPreference, TemporalPreference,
    TimeBuckets, TransitionStats,
};
use crate::llm::with_scenario;
use crate::memory::{Level, PooledTrajectory, ReflectionRecord};

pub const ACTIVITY_SYSTEM: &str = "You are a mobility analyst. Given a user's visit history and \
current situation, predict which kinds of places (activity categories) they will visit next.";

pub const LOCATION_SYSTEM: &str = "You are a mobility analyst. Given a user's recent movements, \
place preferences and a list of nearby candidate places, predict which exact place they will \
visit next.";

/// Header line of every reflection section.
pub const REFLECTION_HEADER: &str = "## Lessons from past mistakes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKey {
    LongTermPattern,
    RecentPattern,
    Transitions,
    SimilarTrajectories,
    RecentVisits,
    TimePreferences,
    AreaPreferences,
    Movement,
    Candidates,
    Reflections,
}

impl SectionKey {
    pub fn header(self) -> &'static str {
        match self {
            SectionKey::LongTermPattern => "## Long-term activity pattern",
            SectionKey::RecentPattern => "## Recent activity pattern",
            SectionKey::Transitions => "## Typical next activities",
            SectionKey::SimilarTrajectories => "## Similar trajectories from other visits",
            SectionKey::RecentVisits => "## Recent visits",
            SectionKey::TimePreferences => "## Places usually visited at this time",
            SectionKey::AreaPreferences => "## Favourite areas",
            SectionKey::Movement => "## Movement history",
            SectionKey::Candidates => "## Candidate places (nearest first)",
            SectionKey::Reflections => REFLECTION_HEADER,
        }
    }

    pub const ACTIVITY: [SectionKey; 5] = [
        SectionKey::LongTermPattern,
        SectionKey::RecentPattern,
        SectionKey::Transitions,
        SectionKey::SimilarTrajectories,
        SectionKey::Reflections,
    ];

    pub const LOCATION: [SectionKey; 6] = [
        SectionKey::RecentVisits,
        SectionKey::TimePreferences,
        SectionKey::AreaPreferences,
        SectionKey::Movement,
        SectionKey::Candidates,
        SectionKey::Reflections,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Section {
    pub key: SectionKey,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub level: Level,
    pub system: String,
    pub sections: Vec<Section>,
    pub rendered: String,
}

impl PromptBundle {
    fn new(level: Level, system: &str, scenario: &str, preamble: &str, sections: Vec<Section>, task: &str) -> Self {
        let mut body = format!("## Current situation\n{preamble}\n");
        for s in &sections {
            let _ = writeln!(body, "{}\n{}", s.key.header(), s.body.trim_end());
            body.push('\n');
        }
        body.push_str("## Task\n");
        body.push_str(task);
        PromptBundle {
            level,
            system: system.to_string(),
            sections,
            rendered: with_scenario(scenario, &body),
        }
    }

    pub fn keys(&self) -> Vec<SectionKey> {
        self.sections.iter().map(|s| s.key).collect()
    }

    /// Appended on a re-ask after an unreadable answer.
    pub fn with_reminder(&self) -> String {
        let what = match self.level {
            Level::Activity => "category names",
            Level::Location => "candidate place ids",
        };
        format!(
            "{}\n\nYour previous answer could not be read. Reply with only a ```json fenced list of {what}, nothing else.",
            self.rendered
        )
    }
}

fn head_lines(text: &str, n: usize) -> String {
    let mut out: String = text.lines().take(n).map(|l| format!("{l}\n")).collect();
    if out.is_empty() {
        out.push_str("(none)\n");
    }
    out
}

fn reflections_body(records: &[&ReflectionRecord]) -> String {
    if records.is_empty() {
        return "(none)\n".into();
    }
    records
        .iter()
        .map(|r| {
            format!(
                "- situation: {}\n  predicted: {}; actual: {}\n  lesson: {}\n",
                r.context_digest,
                r.prediction,
                r.actual,
                r.lesson.trim()
            )
        })
        .collect()
}

fn transitions_body(stats: &TransitionStats, from: &str) -> String {
    let rows: Vec<String> = stats
        .ranked()
        .into_iter()
        .filter(|(a, _, _)| *a == from)
        .take(10)
        .map(|(_, to, n)| format!("- {from} -> {to}: {n} of {}\n", stats.row_totals[from]))
        .collect();
    if rows.is_empty() {
        format!("(no transitions observed after {from})\n")
    } else {
        rows.concat()
    }
}

/// Activity-stage inputs.
pub struct ActivityInputs<'a> {
    pub scenario: &'a str,
    pub context: &'a Context,
    pub buckets: &'a TimeBuckets,
    pub long_term: &'a CategoryProfile,
    pub recent: &'a CategoryProfile,
    pub transitions: &'a TransitionStats,
    pub similar: &'a [&'a PooledTrajectory],
    /// `None` drops the reflection section entirely.
    pub reflections: Option<&'a [&'a ReflectionRecord]>,
    pub k: usize,
    pub categories: &'a BTreeSet<String>,
}

pub fn assemble_activity_prompt(i: &ActivityInputs<'_>) -> PromptBundle {
    let similar = if i.similar.is_empty() {
        "(none)\n".to_string()
    } else {
        i.similar.iter().map(|t| format!("- {}\n", t.digest)).collect()
    };
    let mut sections = vec![
        Section {
            key: SectionKey::LongTermPattern,
            body: head_lines(&i.long_term.to_string(), 10),
        },
        Section {
            key: SectionKey::RecentPattern,
            body: head_lines(&i.recent.to_string(), 10),
        },
        Section {
            key: SectionKey::Transitions,
            body: transitions_body(i.transitions, &i.context.current_category),
        },
        Section {
            key: SectionKey::SimilarTrajectories,
            body: similar,
        },
    ];
    if let Some(r) = i.reflections {
        sections.push(Section {
            key: SectionKey::Reflections,
            body: reflections_body(r),
        });
    }
    let names: Vec<&str> = i.categories.iter().map(String::as_str).collect();
    let task = if i.k == 1 {
        "Name the single category the user is most likely to visit next.".to_string()
    } else if i.k >= names.len() {
        "Rank all categories below by how likely the user visits one next, most likely first."
            .to_string()
    } else {
        format!(
            "Rank the {} categories the user is most likely to visit next, most likely first.",
            i.k
        )
    };
    let task = format!(
        "{task}\nUse only these categories: {}\nAnswer with a JSON list of category names inside a ```json fenced block.",
        names.join(", ")
    );
    PromptBundle::new(
        Level::Activity,
        ACTIVITY_SYSTEM,
        i.scenario,
        &i.context.render(i.buckets),
        sections,
        &task,
    )
}

/// Location-stage inputs.
pub struct LocationInputs<'a> {
    pub scenario: &'a str,
    pub context: &'a Context,
    pub buckets: &'a TimeBuckets,
    pub prefix: &'a [CheckIn],
    pub recent_window: usize,
    pub pois: &'a PoiIndex,
    pub temporal: &'a TemporalPreference,
    pub spatial: &'a SpatialPreference,
    pub movement: &'a MovementSummary,
    pub candidates: &'a CandidateSet,
    pub reflections: Option<&'a [&'a ReflectionRecord]>,
    pub limit: usize,
}

pub fn assemble_location_prompt(i: &LocationInputs<'_>) -> PromptBundle {
    let start = i.prefix.len().saturating_sub(i.recent_window.max(1));
    let visits: String = i.prefix[start..]
        .iter()
        .map(|c| format!("- {}\n", visit_line(c, i.pois)))
        .collect();
    let slot = (i.context.bucket(i.buckets), i.context.day_kind());
    let at_time = match i.temporal.buckets.get(&slot) {
        Some(list) if !list.is_empty() => list
            .iter()
            .take(10)
            .map(|(p, n)| {
                let cat = i.pois.get(p).map_or("?", |x| x.category.as_str());
                format!("- {p} ({cat}): {}\n", crate::features::visits(*n))
            })
            .collect(),
        _ => "(none)\n".to_string(),
    };
    let mut sections = vec![
        Section {
            key: SectionKey::RecentVisits,
            body: visits,
        },
        Section {
            key: SectionKey::TimePreferences,
            body: at_time,
        },
        Section {
            key: SectionKey::AreaPreferences,
            body: head_lines(&i.spatial.to_string(), 5),
        },
        Section {
            key: SectionKey::Movement,
            body: i.movement.to_string(),
        },
        Section {
            key: SectionKey::Candidates,
            body: i.candidates.to_string(),
        },
    ];
    if let Some(r) = i.reflections {
        sections.push(Section {
            key: SectionKey::Reflections,
            body: reflections_body(r),
        });
    }
    let task = format!(
        "Rank up to {} candidate places by how likely the user visits them next, most likely first. \
         Use only ids from the candidate list.\nAnswer with a JSON list of place ids inside a ```json fenced block.",
        i.limit
    );
    PromptBundle::new(
        Level::Location,
        LOCATION_SYSTEM,
        i.scenario,
        &i.context.render(i.buckets),
        sections,
        &task,
    )
}
