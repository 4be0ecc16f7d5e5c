use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::context::{trajectory_digest, visit_line, Context, Dataset};
use super::prompt::{
    assemble_activity_prompt, assemble_location_prompt, ActivityInputs, LocationInputs,
    PromptBundle,
};
use super::{PipelineError, ReflectionMode, RunConfig, Variant};
use crate::corpus::{CheckIn, PoiId, Trajectory};
use crate::eval::{rank_of, StepOutcome};
use crate::features::{
    build_all_candidates, build_candidates, movement_summary, recent_profile, CandidateSet,
};
use crate::llm::{parse_categories, parse_pois, CompletionRequest, LlmClient, LlmError, ParseError};
use crate::memory::{
    activity_missed, location_missed, reflect_activity, reflect_location, Embedder,
    EmbeddingVector, Level, MemoryStore, PooledTrajectory, ReflectionCase, ReflectionOutcome,
    ReflectionRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Replay of the validation split that fills the reflection stores.
    Experience,
    Evaluation,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Experience => "experience",
            Phase::Evaluation => "eval",
        }
    }
}

/// Receives every prediction prompt before it is sent.
pub type PromptSink<'a> = &'a (dyn Fn(&PromptBundle) + Sync);

pub struct Services<'a> {
    pub llm: &'a LlmClient,
    pub embedder: &'a dyn Embedder,
    pub prompt_sink: Option<PromptSink<'a>>,
}

/// Scenario tag of one model call: `<phase>/<stage>/<user>/<trajectory>/<step>`.
pub fn scenario(phase: Phase, stage: &str, traj: &Trajectory, step: usize) -> String {
    format!("{}/{stage}/{}/{}/{step}", phase.name(), traj.user, traj.id)
}

#[derive(Default)]
struct Calls {
    calls: u32,
    reasks: u32,
    parse_failures: u32,
}

/// Sends `bundle`, re-asking with a format reminder while the answer does
/// not parse. `Ok(None)` means every attempt was unreadable.
fn ask<T>(
    bundle: &PromptBundle,
    config: &RunConfig,
    services: &Services<'_>,
    calls: &mut Calls,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Option<T>, LlmError> {
    if let Some(sink) = services.prompt_sink {
        sink(bundle);
    }
    for attempt in 0..=config.reasks {
        let user_text = if attempt == 0 {
            bundle.rendered.clone()
        } else {
            calls.reasks += 1;
            bundle.with_reminder()
        };
        let request = CompletionRequest {
            system_text: bundle.system.clone(),
            user_text,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            seed: Some(config.seed),
        };
        calls.calls += 1;
        let reply = services.llm.complete(&request)?;
        match parse(&reply.text) {
            Ok(v) => return Ok(Some(v)),
            Err(e) => {
                log::debug!("unreadable answer ({e}): {:?}", reply.text);
                calls.parse_failures += 1;
            }
        }
    }
    Ok(None)
}

/// Categories from the user's long-term profile, then the recent window,
/// then corpus-wide frequency, then the rest alphabetically, up to `k`.
fn fallback_categories(prefix: &[CheckIn], ctx: &Context, data: &Dataset<'_>, config: &RunConfig, k: usize) -> Vec<String> {
    let recent = recent_profile(prefix, data.pois(), config.recent_window);
    let feats = data.features(&ctx.user);
    let mut out: Vec<String> = Vec::with_capacity(k);
    let sources = feats
        .long_term
        .ranked()
        .chain(recent.ranked())
        .chain(data.global_profile.ranked())
        .chain(data.splits.category_set.iter().map(String::as_str));
    for c in sources {
        if out.len() == k {
            break;
        }
        if !out.iter().any(|x| x == c) {
            out.push(c.to_string());
        }
    }
    out
}

struct Retrieved<'m> {
    similar: Vec<&'m PooledTrajectory>,
    activity: Option<Vec<&'m ReflectionRecord>>,
    location: Option<Vec<&'m ReflectionRecord>>,
}

fn retrieve<'m>(
    prefix: &[CheckIn],
    digest: &str,
    data: &Dataset<'_>,
    config: &RunConfig,
    services: &Services<'_>,
    memory: &'m MemoryStore,
) -> Result<Retrieved<'m>, PipelineError> {
    let hierarchical = config.variant != Variant::NoHierarchy;
    let reflective = config.variant.uses_reflection();
    let mut out = Retrieved {
        similar: Vec::new(),
        activity: None,
        location: None,
    };
    if hierarchical && config.similar_trajectories > 0 && !memory.trajectory_pool().is_empty() {
        let q = services
            .embedder
            .embed(&trajectory_digest(prefix, data.pois(), &config.time_buckets))?;
        out.similar = memory.retrieve_similar(&q, config.similar_trajectories)?;
    }
    if reflective {
        let n = config.n_reflections;
        let q: Option<EmbeddingVector> = if n > 0 {
            Some(services.embedder.embed(digest)?)
        } else {
            None
        };
        let get = |level| match &q {
            Some(q) => memory.retrieve_top_n(q, level, n),
            None => Ok(Vec::new()),
        };
        if hierarchical {
            out.activity = Some(get(Level::Activity)?);
        }
        out.location = Some(get(Level::Location)?);
    }
    Ok(out)
}

struct Prediction {
    categories: Vec<String>,
    candidates: CandidateSet,
    ranking: Vec<PoiId>,
    activity_fallback: bool,
    location_fallback: bool,
}

#[allow(clippy::too_many_arguments)]
fn predict(
    phase: Phase,
    traj: &Trajectory,
    step: usize,
    ctx: &Context,
    digest: &str,
    data: &Dataset<'_>,
    config: &RunConfig,
    services: &Services<'_>,
    memory: &MemoryStore,
    calls: &mut Calls,
) -> Result<Prediction, PipelineError> {
    let prefix = &traj.checkins[..step];
    let pois = data.pois();
    let feats = data.features(&ctx.user);
    let got = retrieve(prefix, digest, data, config, services, memory)?;

    let mut categories = Vec::new();
    let mut activity_fallback = false;
    let candidates = if config.variant == Variant::NoHierarchy {
        build_all_candidates(ctx.current_location, pois, config.candidate_cap)
    } else {
        let k = config.effective_k();
        let tag = scenario(phase, "activity", traj, step);
        let recent = recent_profile(prefix, pois, config.recent_window);
        let bundle = assemble_activity_prompt(&ActivityInputs {
            scenario: &tag,
            context: ctx,
            buckets: &config.time_buckets,
            long_term: &feats.long_term,
            recent: &recent,
            transitions: &data.transitions,
            similar: &got.similar,
            reflections: got.activity.as_deref(),
            k,
            categories: &data.splits.category_set,
        });
        let parsed = ask(&bundle, config, services, calls, |t| {
            parse_categories(t, &data.splits.category_set, k)
        })?;
        categories = match parsed {
            Some(p) => p.ranked_categories,
            None => {
                activity_fallback = true;
                fallback_categories(prefix, ctx, data, config, k)
            }
        };
        build_candidates(ctx.current_location, &categories, pois, config.candidate_cap)?
    };
    if candidates.is_empty() {
        return Err(PipelineError::Step("no candidate POIs".into()));
    }

    let tag = scenario(phase, "location", traj, step);
    let movement = movement_summary(prefix, pois, config.movement_window);
    let bundle = assemble_location_prompt(&LocationInputs {
        scenario: &tag,
        context: ctx,
        buckets: &config.time_buckets,
        prefix,
        recent_window: config.recent_window,
        pois,
        temporal: &feats.temporal,
        spatial: &feats.spatial,
        movement: &movement,
        candidates: &candidates,
        reflections: got.location.as_deref(),
        limit: config.poi_limit,
    });
    let parsed = ask(&bundle, config, services, calls, |t| {
        parse_pois(t, candidates.ids(), config.poi_limit)
    })?;
    let (ranking, location_fallback) = match parsed {
        Some(p) => (p.ranked_pois, false),
        None => (candidates.ids().take(config.poi_limit).cloned().collect(), true),
    };
    Ok(Prediction {
        categories,
        candidates,
        ranking,
        activity_fallback,
        location_fallback,
    })
}

/// Prediction-side result of one step, plus what a reflection would need.
pub struct StepResult {
    pub outcome: StepOutcome,
    context_digest: Option<String>,
}

/// Predicts `traj.checkins[step]` from the check-ins before it. Never
/// fails: stage errors are recorded on the outcome, which then scores 0.
pub fn predict_step(
    phase: Phase,
    traj: &Trajectory,
    step: usize,
    data: &Dataset<'_>,
    config: &RunConfig,
    services: &Services<'_>,
    memory: &MemoryStore,
) -> StepResult {
    let target = &traj.checkins[step];
    let mut outcome = StepOutcome {
        user: traj.user.clone(),
        trajectory_id: traj.id.clone(),
        step,
        target: target.poi.clone(),
        target_category: data.category_of(&target.poi).unwrap_or("?").to_string(),
        predicted_categories: Vec::new(),
        candidate_count: 0,
        ranking: Vec::new(),
        rank: None,
        llm_calls: 0,
        reasks: 0,
        activity_fallback: false,
        location_fallback: false,
        parse_failures: 0,
        error: None,
        activity_reflected: false,
        location_reflected: false,
        reflections_skipped: 0,
    };
    let prefix = &traj.checkins[..step];
    let ctx = match Context::build(prefix, target.timestamp, target.utc_offset_min, data) {
        Ok(c) => c,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return StepResult {
                outcome,
                context_digest: None,
            };
        }
    };
    let digest = ctx.digest(prefix, data.pois(), config);
    let mut calls = Calls::default();
    let result = predict(phase, traj, step, &ctx, &digest, data, config, services, memory, &mut calls);
    outcome.llm_calls = calls.calls;
    outcome.reasks = calls.reasks;
    outcome.parse_failures = calls.parse_failures;
    match result {
        Ok(p) => {
            outcome.rank = rank_of(&p.ranking, &target.poi);
            outcome.predicted_categories = p.categories;
            outcome.candidate_count = p.candidates.len();
            outcome.ranking = p.ranking;
            outcome.activity_fallback = p.activity_fallback;
            outcome.location_fallback = p.location_fallback;
        }
        Err(e) => outcome.error = Some(e.to_string()),
    }
    StepResult {
        outcome,
        context_digest: Some(digest),
    }
}

fn note(out: ReflectionOutcome, stored: &mut bool, skipped: &mut u32, at: &str) {
    match out {
        ReflectionOutcome::Stored => *stored = true,
        ReflectionOutcome::Skipped(why) => {
            log::warn!("reflection skipped at {at}: {why}");
            *skipped += 1;
        }
    }
}

/// Fires the activity and location reflections a finished step calls for
/// and records what happened on its outcome.
#[allow(clippy::too_many_arguments)]
pub fn reflect_step(
    phase: Phase,
    traj: &Trajectory,
    result: &mut StepResult,
    data: &Dataset<'_>,
    config: &RunConfig,
    services: &Services<'_>,
    memory: &mut MemoryStore,
    created_at: u64,
) {
    let o = &mut result.outcome;
    let Some(digest) = result.context_digest.as_deref() else { return };
    if o.error.is_some() || !config.variant.uses_reflection() || data.cohorts.is_zero_shot(&o.user) {
        return;
    }
    let prefix = &traj.checkins[..o.step];
    let start = prefix.len().saturating_sub(config.recent_window.max(1));
    let trajectory: String = prefix[start..]
        .iter()
        .map(|c| visit_line(c, data.pois()) + "\n")
        .collect();
    let seed = Some(config.seed);
    let at = format!("{}/{}", traj.id, o.step);

    if config.variant != Variant::NoHierarchy {
        let depth = config.activity_miss_depth.unwrap_or(usize::MAX);
        if activity_missed(&o.predicted_categories, &o.target_category, depth) {
            let tag = scenario(phase, "reflect-activity", traj, o.step);
            let case = ReflectionCase {
                scenario: &tag,
                user: &o.user,
                context_digest: digest,
                trajectory: &trajectory,
                predicted: &o.predicted_categories,
                actual: &o.target_category,
                category: None,
                created_at,
            };
            let out = reflect_activity(&case, services.llm, services.embedder, memory, seed);
            note(out, &mut o.activity_reflected, &mut o.reflections_skipped, &at);
        }
    }
    if location_missed(&o.ranking, &o.target, config.location_miss_depth) {
        let tag = scenario(phase, "reflect-location", traj, o.step);
        let predicted: Vec<String> = o.ranking.iter().map(|p| p.0.clone()).collect();
        let case = ReflectionCase {
            scenario: &tag,
            user: &o.user,
            context_digest: digest,
            trajectory: &trajectory,
            predicted: &predicted,
            actual: &o.target.0,
            category: Some(&o.target_category),
            created_at,
        };
        let out = reflect_location(&case, services.llm, services.embedder, memory, seed);
        note(out, &mut o.location_reflected, &mut o.reflections_skipped, &at);
    }
}

/// Resume and interruption controls for [`run_split`].
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitOptions {
    /// Steps already completed by an earlier run.
    pub skip: usize,
    /// Stop after this many steps (counted after `skip`).
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitSummary {
    /// Prediction steps in the split.
    pub total: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
    pub activity_reflections: usize,
    pub location_reflections: usize,
    pub reflections_skipped: usize,
}

impl SplitSummary {
    pub fn finished(&self) -> bool {
        self.skipped + self.completed == self.total
    }
}

/// `(trajectory index, step)` for every prediction target: each check-in
/// after the first of its trajectory.
pub fn enumerate_steps(trajectories: &[&Trajectory]) -> Vec<(usize, usize)> {
    trajectories
        .iter()
        .enumerate()
        .flat_map(|(t, traj)| (1..traj.len()).map(move |s| (t, s)))
        .collect()
}

/// Runs every step of `trajectories` in order, handing each outcome to
/// `sink` as soon as it (and every step before it) is done.
///
/// Reflections are written during the experience phase and, in online
/// mode, during evaluation; those runs are sequential. Read-only runs use
/// `config.workers` threads.
#[allow(clippy::too_many_arguments)]
pub fn run_split(
    phase: Phase,
    trajectories: &[&Trajectory],
    data: &Dataset<'_>,
    config: &RunConfig,
    services: &Services<'_>,
    memory: &mut MemoryStore,
    options: SplitOptions,
    sink: &mut dyn FnMut(&StepOutcome) -> Result<(), PipelineError>,
) -> Result<SplitSummary, PipelineError> {
    config.validate()?;
    let steps = enumerate_steps(trajectories);
    let mut summary = SplitSummary {
        total: steps.len(),
        skipped: options.skip.min(steps.len()),
        ..SplitSummary::default()
    };
    let end = options
        .limit
        .map_or(steps.len(), |l| (summary.skipped + l).min(steps.len()));
    let todo = &steps[summary.skipped..end];
    let writes = config.variant.uses_reflection()
        && (phase == Phase::Experience || config.reflection_mode == ReflectionMode::Online);

    let mut emit = |o: &StepOutcome, summary: &mut SplitSummary| {
        summary.completed += 1;
        summary.failed += usize::from(o.error.is_some());
        summary.activity_reflections += usize::from(o.activity_reflected);
        summary.location_reflections += usize::from(o.location_reflected);
        summary.reflections_skipped += o.reflections_skipped as usize;
        sink(o)
    };

    if writes || config.workers == 1 {
        for (i, &(t, s)) in todo.iter().enumerate() {
            let traj = trajectories[t];
            let mut r = predict_step(phase, traj, s, data, config, services, memory);
            if writes {
                let created_at = (summary.skipped + i) as u64;
                reflect_step(phase, traj, &mut r, data, config, services, memory, created_at);
            }
            emit(&r.outcome, &mut summary)?;
        }
        return Ok(summary);
    }

    let frozen: &MemoryStore = memory;
    for chunk in todo.chunks(config.workers * 8) {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<StepOutcome>>> = chunk.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..config.workers.min(chunk.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(t, s)) = chunk.get(i) else { break };
                    let r = predict_step(phase, trajectories[t], s, data, config, services, frozen);
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r.outcome);
                });
            }
        });
        for slot in slots {
            let o = slot
                .into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .expect("every step in the chunk ran");
            emit(&o, &mut summary)?;
        }
    }
    Ok(summary)
}

/// Embeds every training trajectory of non-held-out users into the
/// similar-trajectory pool.
pub fn build_trajectory_pool<'t>(
    trajectories: impl IntoIterator<Item = &'t Trajectory>,
    data: &Dataset<'_>,
    config: &RunConfig,
    embedder: &dyn Embedder,
    memory: &mut MemoryStore,
) -> Result<usize, PipelineError> {
    let items: Vec<(&Trajectory, String)> = trajectories
        .into_iter()
        .filter(|t| !data.cohorts.is_zero_shot(&t.user))
        .map(|t| (t, trajectory_digest(&t.checkins, data.pois(), &config.time_buckets)))
        .collect();
    for batch in items.chunks(64) {
        let texts: Vec<&str> = batch.iter().map(|(_, d)| d.as_str()).collect();
        let vectors = embedder.embed_batch(&texts)?;
        for ((t, digest), embedding) in batch.iter().zip(vectors) {
            memory.push_trajectory(PooledTrajectory {
                trajectory_id: t.id.clone(),
                user: t.user.clone(),
                digest: digest.clone(),
                embedding,
            })?;
        }
    }
    Ok(items.len())
}
