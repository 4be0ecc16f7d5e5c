use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::features::TimeBuckets;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Activity stage, then location stage, both with reflections.
    #[default]
    Full,
    /// Both stages, no reflection retrieval or generation.
    NoReflection,
    /// One location-style call over all nearby POIs, with reflections.
    NoHierarchy,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoReflection => "no_reflection",
            Variant::NoHierarchy => "no_hierarchy",
        }
    }

    pub fn uses_reflection(self) -> bool {
        self != Variant::NoReflection
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityMode {
    /// Ask for a ranked list of `k_categories` categories.
    #[default]
    Ranked,
    /// Ask for the single most likely category.
    Single,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReflectionMode {
    /// Reflect only while replaying the validation split; evaluation reads a
    /// frozen store.
    #[default]
    Offline,
    /// Keep reflecting on misses during evaluation too.
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k_categories: usize,
    pub n_reflections: usize,
    pub variant: Variant,
    pub activity_mode: ActivityMode,
    pub reflection_mode: ReflectionMode,
    /// Activity reflection fires when the true category is not in the first
    /// this-many predictions; unset means the whole list.
    pub activity_miss_depth: Option<usize>,
    pub location_miss_depth: usize,
    pub candidate_cap: usize,
    pub poi_limit: usize,
    pub recent_window: usize,
    pub movement_window: usize,
    pub cell_size_deg: f64,
    pub time_buckets: TimeBuckets,
    pub similar_trajectories: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    /// Extra attempts with a stricter format reminder after a parse failure.
    pub reasks: u32,
    /// Trajectories evaluated concurrently when the memory is read-only.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k_categories: 20,
            n_reflections: 2,
            variant: Variant::Full,
            activity_mode: ActivityMode::Ranked,
            reflection_mode: ReflectionMode::Offline,
            activity_miss_depth: None,
            location_miss_depth: 10,
            candidate_cap: 100,
            poi_limit: 20,
            recent_window: 10,
            movement_window: 5,
            cell_size_deg: 0.01,
            time_buckets: TimeBuckets::default(),
            similar_trajectories: 2,
            temperature: 0.0,
            max_tokens: 512,
            seed: 42,
            reasks: 1,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.k_categories == 0 {
            return bad("k_categories must be at least 1");
        }
        if self.poi_limit == 0 || self.candidate_cap == 0 {
            return bad("poi_limit and candidate_cap must be at least 1");
        }
        if self.location_miss_depth == 0 || self.activity_miss_depth == Some(0) {
            return bad("miss depths must be at least 1");
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return bad("temperature must be non-negative");
        }
        if !(self.cell_size_deg > 0.0 && self.cell_size_deg.is_finite()) {
            return bad("cell_size_deg must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        self.time_buckets
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Number of categories the activity stage asks for.
    pub fn effective_k(&self) -> usize {
        match self.activity_mode {
            ActivityMode::Ranked => self.k_categories,
            ActivityMode::Single => 1,
        }
    }

    /// Short hash of the canonical JSON form. The worker count does not
    /// change results and is left out.
    pub fn digest(&self) -> String {
        let canonical = RunConfig {
            workers: 1,
            ..self.clone()
        };
        crate::digest_hex(&serde_json::to_vec(&canonical).expect("config serializes"))
    }
}
