#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trailcast::corpus::{
    parse_checkins, preprocess, stratify_users, Corpus, CorpusSplits, PoiId, PreprocessParams,
    Schema, Trajectory, UserCohorts, UserId,
};
use trailcast::eval::{
    acc_at_k, aggregate, reciprocal_rank, render_report, Averaging, EvalReport, ReportFormat,
    Scope, StepOutcome,
};
use trailcast::llm::{
    render_answer, Backend, BackendError, Completion, CompletionRequest, LlmClient, RetryPolicy,
    ScriptedBackend, ScriptedFixture,
};
use trailcast::memory::{
    persist, Embedder, EmbeddingVector, HashEmbedder, Level, MemoryStore, ReflectionRecord,
};
use trailcast::pipeline::{
    corpus_digest, run_split, run_split_to_file, Dataset, OutcomeHeader, Phase, PromptBundle,
    RunConfig, Services, SplitOptions, SplitSummary, Variant,
};

pub type Check = Result<(), String>;

const LESSONS_HEADER: &str = "## Lessons from past mistakes";
const CANDIDATES_HEADER: &str = "## Candidate places (nearest first)\n";
const CATEGORY_LIST: &str = "Use only these categories: ";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub struct Fixture {
    pub raw: Corpus,
    pub filtered: Corpus,
    pub splits: CorpusSplits,
    pub cohorts: UserCohorts,
}

impl Fixture {
    pub fn load() -> Self {
        let ingested = parse_checkins(&fixture_dir().join("checkins.csv"), &Schema::canonical(','))
            .expect("fixture parses");
        assert!(ingested.rejects.is_empty(), "fixture rows are all valid");
        let (filtered, splits) =
            preprocess(&ingested.corpus, &PreprocessParams::default()).expect("fixture preprocesses");
        let cohorts = stratify_users(&splits).expect("fixture stratifies");
        Fixture {
            raw: ingested.corpus,
            filtered,
            splits,
            cohorts,
        }
    }

    pub fn valid(&self) -> Vec<&Trajectory> {
        self.cohorts.experience_trajectories(&self.splits).collect()
    }

    pub fn test(&self) -> Vec<&Trajectory> {
        self.cohorts.evaluation_trajectories(&self.splits).collect()
    }

    pub fn category(&self, poi: &PoiId) -> &str {
        &self.raw.pois[poi].category
    }

    /// `(trajectory id, step)` -> `(category, poi)` of every prediction
    /// target in `trajs`.
    pub fn truth(&self, trajs: &[&Trajectory]) -> HashMap<(String, usize), (String, String)> {
        trajs
            .iter()
            .flat_map(|t| {
                t.checkins.iter().enumerate().skip(1).map(|(s, c)| {
                    (
                        (t.id.clone(), s),
                        (self.category(&c.poi).to_string(), c.poi.0.clone()),
                    )
                })
            })
            .collect()
    }
}

fn reply(text: String) -> Result<Completion, BackendError> {
    Ok(Completion { text, usage: None })
}

/// `(stage, trajectory id, step)` from a scenario tag
/// `<phase>/<stage>/<user>/<trajectory>/<step>`.
pub fn parse_tag(tag: &str) -> Option<(&str, &str, usize)> {
    let parts: Vec<&str> = tag.split('/').collect();
    match parts.as_slice() {
        [_, stage, _, traj, step] => Some((stage, traj, step.parse().ok()?)),
        _ => None,
    }
}

fn presented_categories(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(CATEGORY_LIST))
        .map(|l| l.split(", ").map(str::to_string).collect())
        .unwrap_or_default()
}

fn presented_candidates(prompt: &str) -> Vec<String> {
    let Some(start) = prompt.find(CANDIDATES_HEADER) else { return Vec::new() };
    prompt[start + CANDIDATES_HEADER.len()..]
        .lines()
        .take_while(|l| !l.is_empty() && !l.starts_with("## "))
        .filter_map(|l| {
            let (_, rest) = l.split_once(". ")?;
            Some(rest.split(" | ").next()?.to_string())
        })
        .collect()
}

/// Answers every activity prompt with the first `categories` categories it
/// lists (all when `None`) and every location prompt with the candidates in
/// presented order.
pub fn echo_backend(categories: Option<usize>) -> impl Backend {
    move |r: &CompletionRequest| {
        let (stage, _, _) = r.scenario().and_then(parse_tag).unwrap_or(("", "", 0));
        match stage {
            "activity" => {
                let cats = presented_categories(&r.user_text);
                let n = categories.unwrap_or(cats.len());
                reply(render_answer(&cats[..n.min(cats.len())]))
            }
            "location" => reply(render_answer(&presented_candidates(&r.user_text))),
            _ => reply("Lesson: prefer places close to the current one.".into()),
        }
    }
}

/// Fixture mapping every activity and location tag of `trajs` to the true
/// category and POI.
pub fn perfect_fixture(phase: Phase, trajs: &[&Trajectory], f: &Fixture) -> ScriptedFixture {
    let mut fixture = ScriptedFixture::default();
    for t in trajs {
        for s in 1..t.len() {
            let poi = &t.checkins[s].poi;
            let tag = |stage: &str| format!("{}/{stage}/{}/{}/{s}", phase.name(), t.user, t.id);
            fixture
                .responses
                .insert(tag("activity"), render_answer(&[f.category(poi)]));
            fixture.responses.insert(tag("location"), render_answer(&[&poi.0]));
        }
    }
    fixture
}

/// Planted miss pattern of a step: `(activity miss, location miss)`.
/// An activity miss removes the true category from the candidates, so it
/// is always a location miss too.
pub fn planted(traj: &str, step: usize) -> (bool, bool) {
    let h = traj
        .bytes()
        .fold(step as u64 * 31 + 7, |h, b| h.wrapping_mul(131).wrapping_add(u64::from(b)));
    let act = h % 3 == 0;
    (act, act || h % 4 == 1)
}

/// Answers from the truth table, missing exactly where [`planted`] says.
/// Activity answers name a second category so that a location miss always
/// has other candidates to rank.
pub fn planted_backend(truth: HashMap<(String, usize), (String, String)>) -> impl Backend {
    move |r: &CompletionRequest| {
        let Some((stage, traj, step)) = r.scenario().and_then(parse_tag) else {
            return Err(BackendError::NoScript(String::new()));
        };
        let Some((cat, poi)) = truth.get(&(traj.to_string(), step)) else {
            return reply("Lesson: look again at the routine.".into());
        };
        let (act_miss, loc_miss) = planted(traj, step);
        match stage {
            "activity" if act_miss => {
                let wrong = presented_categories(&r.user_text)
                    .into_iter()
                    .find(|c| c != cat)
                    .expect("more than one category");
                reply(render_answer(&[wrong]))
            }
            "activity" => {
                let other = presented_categories(&r.user_text)
                    .into_iter()
                    .find(|c| c != cat)
                    .expect("more than one category");
                reply(render_answer(&[cat.clone(), other]))
            }
            "location" => {
                let mut ids: Vec<String> = presented_candidates(&r.user_text)
                    .into_iter()
                    .filter(|p| p != poi)
                    .collect();
                if !loc_miss {
                    ids.insert(0, poi.clone());
                }
                reply(render_answer(&ids))
            }
            _ => reply(format!("Lesson: at {traj} the user went to {cat}.")),
        }
    }
}

/// Wraps a backend and counts calls per stage.
pub struct Counting<B> {
    inner: B,
    pub counts: Arc<Mutex<BTreeMap<String, usize>>>,
}

impl<B: Backend> Counting<B> {
    pub fn new(inner: B) -> Self {
        Counting {
            inner,
            counts: Arc::default(),
        }
    }
}

impl<B: Backend> Backend for Counting<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let stage = request
            .scenario()
            .and_then(parse_tag)
            .map_or("?", |(s, _, _)| s)
            .to_string();
        *self.counts.lock().unwrap().entry(stage).or_default() += 1;
        self.inner.complete(request)
    }
}

pub struct Run {
    pub outcomes: Vec<StepOutcome>,
    pub summary: SplitSummary,
    pub prompts: Vec<PromptBundle>,
}

pub fn embedder() -> HashEmbedder {
    HashEmbedder::default()
}

pub fn fresh_memory() -> MemoryStore {
    MemoryStore::new(HashEmbedder::default().dim())
}

pub fn run(
    f: &Fixture,
    phase: Phase,
    trajs: &[&Trajectory],
    config: &RunConfig,
    backend: impl Backend + 'static,
    memory: &mut MemoryStore,
) -> Run {
    let data = Dataset::new(&f.splits, &f.cohorts, config).expect("dataset");
    let llm = LlmClient::new(backend, RetryPolicy::immediate(0));
    let embedder = embedder();
    let prompts = Mutex::new(Vec::new());
    let sink = |b: &PromptBundle| prompts.lock().unwrap().push(b.clone());
    let services = Services {
        llm: &llm,
        embedder: &embedder,
        prompt_sink: Some(&sink),
    };
    let mut outcomes = Vec::new();
    let summary = run_split(
        phase,
        trajs,
        &data,
        config,
        &services,
        memory,
        SplitOptions::default(),
        &mut |o| {
            outcomes.push(o.clone());
            Ok(())
        },
    )
    .expect("run_split");
    Run {
        outcomes,
        summary,
        prompts: prompts.into_inner().unwrap(),
    }
}

pub fn config(variant: Variant) -> RunConfig {
    RunConfig {
        variant,
        ..RunConfig::default()
    }
}

pub fn report(outcomes: &[StepOutcome], f: &Fixture, variant: &str) -> Vec<EvalReport> {
    let scope = Scope {
        dataset: "fixture".into(),
        split: "test".into(),
        cohort: String::new(),
        variant: variant.into(),
        config_digest: "0".into(),
    };
    aggregate(outcomes, Some(&f.cohorts), &scope, Averaging::Micro).expect("non-empty")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Check {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

/// MRR over ranks summed in ascending rank order.
fn mrr_by_rank(ranks: &[Option<usize>]) -> f64 {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for r in ranks.iter().flatten() {
        *hist.entry(*r).or_default() += 1;
    }
    hist.iter().map(|(r, c)| *c as f64 / *r as f64).sum::<f64>() / ranks.len() as f64
}

fn linear_rank(ranking: &[u32], target: u32) -> Option<usize> {
    let mut i = 0;
    while i < ranking.len() {
        if ranking[i] == target {
            return Some(i + 1);
        }
        i += 1;
    }
    None
}

pub fn check_metric_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut outcomes = Vec::with_capacity(10_000);
    let mut ranks = Vec::with_capacity(10_000);
    let mut hits = [0usize; 4];
    for i in 0..10_000 {
        let len = rng.random_range(0..=20);
        let mut pool: Vec<u32> = (0..30).collect();
        for j in 0..len {
            let k = rng.random_range(j..pool.len());
            pool.swap(j, k);
        }
        let ranking = &pool[..len];
        let target = rng.random_range(0..30u32);
        let rank = linear_rank(ranking, target);
        for (h, k) in hits.iter_mut().zip([1, 5, 10, 20]) {
            let expect = u8::from(rank.is_some_and(|r| r <= k));
            *h += usize::from(expect);
            ensure(acc_at_k(ranking, &target, k) == expect, || {
                format!("pair {i}: Acc@{k} of {target} in {ranking:?}")
            })?;
        }
        let rr = rank.map_or(0.0, |r| 1.0 / r as f64);
        ensure(reciprocal_rank(ranking, &target) == rr, || {
            format!("pair {i}: reciprocal rank of {target} in {ranking:?}")
        })?;
        ranks.push(rank);
        outcomes.push(StepOutcome {
            user: UserId(format!("u{}", i % 50)),
            trajectory_id: format!("t{i}"),
            step: 1,
            target: PoiId(target.to_string()),
            target_category: "C".into(),
            predicted_categories: vec!["C".into()],
            candidate_count: len,
            ranking: ranking.iter().map(|p| PoiId(p.to_string())).collect(),
            rank,
            llm_calls: 2,
            reasks: 0,
            activity_fallback: false,
            location_fallback: false,
            parse_failures: 0,
            error: None,
            activity_reflected: false,
            location_reflected: false,
            reflections_skipped: 0,
        });
    }
    let scope = Scope::default();
    let r = &aggregate(&outcomes, None, &scope, Averaging::Micro).map_err(|e| e.to_string())?[0];
    for (h, k) in hits.iter().zip([1, 5, 10, 20]) {
        let expect = *h as f64 / 10_000.0;
        ensure(r.acc[&k] == expect, || format!("aggregate Acc@{k} {} vs {expect}", r.acc[&k]))?;
    }
    let mrr = mrr_by_rank(&ranks);
    ensure(r.mrr == mrr, || format!("aggregate MRR {} vs {mrr}", r.mrr))?;
    within(start, Duration::from_secs(5))
}

fn cosine_oracle(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

pub fn check_retrieval() -> Check {
    let start = Instant::now();
    let dim = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(10_000);
    while vectors.len() < 10_000 {
        let v: Vec<f64> = if vectors.len() % 97 == 5 {
            vectors[rng.random_range(0..vectors.len())].clone()
        } else {
            (0..dim).map(|_| f64::from(rng.random_range(-3i32..=3))).collect()
        };
        if v.iter().any(|x| *x != 0.0) {
            vectors.push(v);
        }
    }
    let created: Vec<u64> = (0..vectors.len()).map(|_| rng.random_range(0..40)).collect();
    let mut store = MemoryStore::new(dim);
    for (i, (v, &t)) in vectors.iter().zip(&created).enumerate() {
        store
            .push_reflection(ReflectionRecord {
                level: Level::Location,
                source_user: "u".into(),
                context_digest: String::new(),
                prediction: String::new(),
                actual: String::new(),
                lesson: i.to_string(),
                embedding: EmbeddingVector(v.clone()),
                created_at: t,
            })
            .map_err(|e| e.to_string())?;
    }
    for q in 0..20 {
        let query: Vec<f64> = if q % 4 == 0 {
            vectors[rng.random_range(0..vectors.len())].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        let mut order: Vec<(f64, u64, usize)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (cosine_oracle(&query, v), created[i], i))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for n in [1, 2, 5] {
            let expect: Vec<String> = order[..n].iter().map(|(_, _, i)| i.to_string()).collect();
            let got: Vec<String> = store
                .retrieve_top_n(&EmbeddingVector(query.clone()), Level::Location, n)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|r| r.lesson.clone())
                .collect();
            ensure(got == expect, || format!("query {q}, n={n}: {got:?} vs {expect:?}"))?;
        }
    }
    within(start, Duration::from_secs(10))
}

pub fn check_preprocessing(f: &Fixture) -> Check {
    let text = std::fs::read_to_string(fixture_dir().join("expected.json")).map_err(|e| e.to_string())?;
    let expected: BTreeMap<String, usize> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let steps = |ts: &[Trajectory]| ts.iter().map(|t| t.len() - 1).sum::<usize>();
    let r = &f.splits.report;
    let got: BTreeMap<String, usize> = [
        ("records", f.raw.checkins.len()),
        ("filtered_checkins", f.filtered.checkins.len()),
        (
            "filtered_users",
            f.filtered.checkins.iter().map(|c| &c.user).collect::<BTreeSet<_>>().len(),
        ),
        ("filtered_pois", f.filtered.pois.len()),
        ("trajectories", r.trajectories),
        ("train", f.splits.train.len()),
        ("valid_kept", f.splits.valid.len()),
        ("valid_dropped", r.valid_dropped),
        ("test_kept", f.splits.test.len()),
        ("test_dropped", r.test_dropped),
        ("train_users", f.splits.user_index.len()),
        ("train_pois", f.splits.poi_index.len()),
        ("test_steps", steps(&f.splits.test)),
        ("valid_steps", steps(&f.splits.valid)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    ensure(got == expected, || format!("got {got:?}, expected {expected:?}"))
}

pub fn check_perfect_oracle(f: &Fixture) -> Check {
    let config = RunConfig::default();
    let mut memory = fresh_memory();
    let mut fixture = perfect_fixture(Phase::Experience, &f.valid(), f);
    fixture
        .responses
        .extend(perfect_fixture(Phase::Evaluation, &f.test(), f).responses);
    let exp = run(f, Phase::Experience, &f.valid(), &config, ScriptedBackend::new(fixture.clone()), &mut memory);
    let eval = run(f, Phase::Evaluation, &f.test(), &config, ScriptedBackend::new(fixture), &mut memory);
    let r = &report(&eval.outcomes, f, "full")[0];
    ensure(r.acc[&1] == 1.0 && r.mrr == 1.0, || format!("Acc@1 {} MRR {}", r.acc[&1], r.mrr))?;
    ensure(r.fallback_rate == 0.0 && r.error_rate == 0.0, || {
        format!("fallback rate {} error rate {}", r.fallback_rate, r.error_rate)
    })?;
    for s in [&exp.summary, &eval.summary] {
        let reflections = s.activity_reflections + s.location_reflections + s.reflections_skipped;
        ensure(reflections == 0, || format!("{reflections} reflections attempted"))?;
    }
    ensure(memory.records(Level::Activity).is_empty() && memory.records(Level::Location).is_empty(), || {
        "reflection stores grew".into()
    })
}

fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (la1, lo1, la2, lo2) = (a.0.to_radians(), a.1.to_radians(), b.0.to_radians(), b.1.to_radians());
    let h = ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
    2.0 * 6371.0 * h.sqrt().asin()
}

/// Ranks of the nearest-first policy, simulated straight from the raw POI
/// table and the training trajectories.
pub fn nearest_first_ranks(f: &Fixture, trajs: &[&Trajectory], limit: usize) -> Vec<Option<usize>> {
    let train_pois: BTreeSet<&PoiId> = f.splits.train.iter().flat_map(|t| t.checkins.iter().map(|c| &c.poi)).collect();
    let at = |p: &PoiId| (f.raw.pois[p].lat, f.raw.pois[p].lon);
    let mut out = Vec::new();
    for t in trajs {
        for s in 1..t.len() {
            let here = at(&t.checkins[s - 1].poi);
            let mut order: Vec<(f64, &PoiId)> = train_pois.iter().map(|p| (haversine_km(here, at(p)), *p)).collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
            out.push(order.iter().take(limit).position(|(_, p)| **p == t.checkins[s].poi).map(|i| i + 1));
        }
    }
    out
}

pub fn check_nearest_neighbor(f: &Fixture) -> Check {
    let config = RunConfig::default();
    let trajs = f.test();
    let got = run(f, Phase::Evaluation, &trajs, &config, echo_backend(None), &mut fresh_memory());
    let expect = nearest_first_ranks(f, &trajs, config.poi_limit);
    let ranks: Vec<Option<usize>> = got.outcomes.iter().map(|o| o.rank).collect();
    ensure(ranks == expect, || format!("ranks {ranks:?} vs simulated {expect:?}"))?;
    let r = &report(&got.outcomes, f, "full")[0];
    for k in [1, 5, 10, 20] {
        let hits = expect.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
        let acc = hits as f64 / expect.len() as f64;
        ensure(r.acc[&k] == acc, || format!("Acc@{k} {} vs simulated {acc}", r.acc[&k]))?;
    }
    let mrr = mrr_by_rank(&expect);
    ensure(r.mrr == mrr, || format!("MRR {} vs simulated {mrr}", r.mrr))?;
    ensure(r.fallback_rate == 0.0, || "fallbacks used".into())
}

/// Reflection stores filled by an experience run full of planted misses.
pub fn experienced_memory(f: &Fixture) -> MemoryStore {
    let mut memory = fresh_memory();
    let valid = f.valid();
    run(f, Phase::Experience, &valid, &RunConfig::default(), planted_backend(f.truth(&valid)), &mut memory);
    memory
}

pub fn check_ablation_structure(f: &Fixture) -> Check {
    let memory = experienced_memory(f);
    ensure(!memory.records(Level::Location).is_empty(), || "experience produced no reflections".into())?;
    let trajs = f.test();
    let steps: usize = trajs.iter().map(|t| t.len() - 1).sum();

    let scan = |variant: Variant| {
        let backend = Counting::new(echo_backend(Some(3)));
        let counts = backend.counts.clone();
        let r = run(f, Phase::Evaluation, &trajs, &config(variant), backend, &mut memory.clone());
        let counts = counts.lock().unwrap().clone();
        (r, counts)
    };

    let (full, full_counts) = scan(Variant::Full);
    ensure(full.prompts.iter().any(|p| p.rendered.contains(LESSONS_HEADER)), || {
        "full run shows no lessons section".into()
    })?;
    let (none, _) = scan(Variant::NoReflection);
    let leaked = none.prompts.iter().filter(|p| p.rendered.contains(LESSONS_HEADER)).count();
    ensure(leaked == 0, || format!("{leaked} no_reflection prompts carry a lessons section"))?;

    let (flat, flat_counts) = scan(Variant::NoHierarchy);
    for (name, r, per_step, counts) in [("full", &full, 2, &full_counts), ("no_hierarchy", &flat, 1, &flat_counts)] {
        let calls: usize = counts.values().sum();
        let reasks: usize = r.outcomes.iter().map(|o| o.reasks as usize).sum();
        ensure(calls - reasks == per_step * steps, || {
            format!("{name}: {calls} calls with {reasks} re-asks over {steps} steps")
        })?;
        let bad = r.outcomes.iter().filter(|o| (o.llm_calls - o.reasks) as usize != per_step).count();
        ensure(bad == 0, || format!("{name}: {bad} steps with the wrong call count"))?;
    }
    ensure(!flat_counts.contains_key("activity"), || "no_hierarchy asked for activities".into())
}

pub fn check_containment(f: &Fixture) -> Check {
    let mut memory = experienced_memory(f);
    let r = run(f, Phase::Evaluation, &f.test(), &RunConfig::default(), echo_backend(Some(3)), &mut memory);
    let mut ranked = 0;
    for o in &r.outcomes {
        for p in &o.ranking {
            ranked += 1;
            let cat = f.category(p);
            ensure(o.predicted_categories.iter().any(|c| c == cat), || {
                format!("{}/{}: {p} ({cat}) outside {:?}", o.trajectory_id, o.step, o.predicted_categories)
            })?;
        }
    }
    ensure(ranked > 0, || "nothing was ranked".into())
}

pub fn check_reflection_accounting(f: &Fixture) -> Check {
    let valid = f.valid();
    let (mut act, mut loc) = (0, 0);
    for t in &valid {
        for s in 1..t.len() {
            let (a, l) = planted(&t.id, s);
            act += usize::from(a);
            loc += usize::from(l);
        }
    }
    ensure(act > 0 && loc > act, || format!("planted pattern too thin: {act}/{loc}"))?;
    let memory = experienced_memory(f);
    let (ga, gl) = (memory.records(Level::Activity).len(), memory.records(Level::Location).len());
    ensure((ga, gl) == (act, loc), || {
        format!("stores grew by activity {ga}, location {gl}; planted {act}, {loc}")
    })
}

/// Experience and evaluation to files in `dir`; returns the outcome stream,
/// both rendered reports and the persisted memory.
pub fn full_run_to_dir(f: &Fixture, dir: &Path, workers: usize) -> Vec<u8> {
    let config = RunConfig {
        workers,
        ..RunConfig::default()
    };
    let data = Dataset::new(&f.splits, &f.cohorts, &config).unwrap();
    let (valid, test) = (f.valid(), f.test());
    let mut truth = f.truth(&valid);
    truth.extend(f.truth(&test));
    let llm = LlmClient::new(planted_backend(truth), RetryPolicy::immediate(0));
    let embedder = embedder();
    let services = Services {
        llm: &llm,
        embedder: &embedder,
        prompt_sink: None,
    };
    let mut memory = fresh_memory();
    trailcast::pipeline::build_trajectory_pool(&f.splits.train, &data, &config, &embedder, &mut memory).unwrap();
    let corpus = corpus_digest(&f.splits);
    let digest = config.digest();
    for (phase, trajs) in [(Phase::Experience, &valid), (Phase::Evaluation, &test)] {
        let header = OutcomeHeader::new(phase.name(), config.variant.name(), &digest, &corpus);
        let path = dir.join(format!("{}.jsonl", phase.name()));
        run_split_to_file(&path, &header, false, phase, trajs, &data, &config, &services, &mut memory, None).unwrap();
    }
    persist(&memory, &dir.join("memory.jsonl")).unwrap();
    let (_, outcomes) = trailcast::pipeline::read_outcomes(&dir.join("eval.jsonl")).unwrap();
    let reports = report(&outcomes, f, "full");
    let mut bytes = Vec::new();
    for name in ["experience.jsonl", "eval.jsonl", "memory.jsonl"] {
        bytes.extend(std::fs::read(dir.join(name)).unwrap());
    }
    for fmt in [ReportFormat::Table, ReportFormat::Jsonl] {
        bytes.extend(render_report(&reports, fmt).unwrap().into_bytes());
    }
    bytes
}

pub fn check_determinism(f: &Fixture) -> Check {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = full_run_to_dir(f, a.path(), 1);
    let second = full_run_to_dir(f, b.path(), 1);
    ensure(first == second, || "sequential runs differ".into())?;
    let c = tempfile::tempdir().unwrap();
    let parallel = full_run_to_dir(f, c.path(), 4);
    ensure(first == parallel, || "a 4-worker run differs from the sequential one".into())
}

pub fn check_defaults() -> Check {
    let c = RunConfig::default();
    ensure(c.k_categories == 20 && c.n_reflections == 2, || {
        format!("K = {}, n = {}", c.k_categories, c.n_reflections)
    })
}

/// Live endpoint smoke run, configured through `TRAILCAST_LIVE_ENDPOINT`,
/// `TRAILCAST_LIVE_MODEL` and optionally `TRAILCAST_LIVE_KEY_ENV`.
/// `Ok(None)` when no endpoint is configured.
#[cfg(feature = "http")]
pub fn check_live(f: &Fixture) -> Result<Option<String>, String> {
    use trailcast::llm::{ChatBackend, ChatBackendConfig};
    let Ok(endpoint) = std::env::var("TRAILCAST_LIVE_ENDPOINT") else { return Ok(None) };
    let model = std::env::var("TRAILCAST_LIVE_MODEL").map_err(|_| "TRAILCAST_LIVE_MODEL is not set".to_string())?;
    let backend = ChatBackend::new(ChatBackendConfig {
        endpoint,
        model,
        api_key_env: std::env::var("TRAILCAST_LIVE_KEY_ENV").ok(),
        timeout_secs: 120,
    });
    let config = RunConfig::default();
    let data = Dataset::new(&f.splits, &f.cohorts, &config).map_err(|e| e.to_string())?;
    let llm = LlmClient::new(backend, RetryPolicy::default());
    let embedder = embedder();
    let services = Services {
        llm: &llm,
        embedder: &embedder,
        prompt_sink: None,
    };
    let mut outcomes = Vec::new();
    let trajs: Vec<&Trajectory> = f.valid().into_iter().chain(f.test()).collect();
    run_split(
        Phase::Evaluation,
        &trajs,
        &data,
        &config,
        &services,
        &mut fresh_memory(),
        SplitOptions { skip: 0, limit: Some(50) },
        &mut |o| {
            outcomes.push(o.clone());
            Ok(())
        },
    )
    .map_err(|e| e.to_string())?;
    let r = &report(&outcomes, f, "full")[0];
    render_report(std::slice::from_ref(r), ReportFormat::Table).map_err(|e| e.to_string())?;
    let failed = r.parse_failure_rate;
    ensure(failed < 0.2, || format!("parse-failure rate {failed:.3}"))?;
    Ok(Some(format!("{} steps, parse-failure rate {failed:.3}", outcomes.len())))
}
