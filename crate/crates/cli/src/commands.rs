use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use serde::Serialize;
use trailcast::corpus::{
    count_timestamp_ties, parse_checkins, preprocess as preprocess_corpus, read_archive, read_splits,
    stratify_users, write_archive, write_splits, zero_shot_holdout, CorpusError, CorpusSplits,
    SplitReport, Trajectory, UserCohorts,
};
use trailcast::eval::{aggregate, render_report, Scope, StepOutcome};
use trailcast::llm::{ChatBackend, LlmClient, ScriptedBackend};
use trailcast::memory::{load, persist, Embedder, HashEmbedder, HttpEmbedder, Level, MemoryStore};
use trailcast::pipeline::{
    build_trajectory_pool, corpus_digest, read_outcomes, run_split_to_file, Checkpoint, Dataset,
    OutcomeHeader, Phase, PromptBundle, ReflectionMode, Services, SplitSummary,
};

use crate::config::{AppConfig, BackendConfig, ConfigError, EmbeddingConfig};
use crate::exit::AllStepsFailed;
use crate::rundir::{read_json, write_json, RunDir};
use crate::{EvalArgs, RunArgs};

const CORPUS: &str = "corpus.jsonl";
const SPLITS: &str = "splits.jsonl";
/// Steps per memory snapshot during `build-memory`.
const SNAPSHOT_EVERY: usize = 32;

fn cohort_file(zero_shot: bool) -> &'static str {
    if zero_shot {
        "cohorts.zero_shot.json"
    } else {
        "cohorts.json"
    }
}

/// File name with the cohort suffix, e.g. `memory.zero_shot.jsonl`.
fn named(stem: &str, zero_shot: bool) -> String {
    if zero_shot {
        format!("{stem}.zero_shot.jsonl")
    } else {
        format!("{stem}.jsonl")
    }
}

#[derive(Serialize)]
struct PreprocessReport {
    records: usize,
    rejected: usize,
    filtered_checkins: usize,
    users: usize,
    pois: usize,
    categories: usize,
    timestamp_ties: usize,
    split: SplitReport,
    strata: Option<[usize; 3]>,
    zero_shot_users: Option<usize>,
}

pub fn preprocess(config: &AppConfig) -> anyhow::Result<()> {
    let dir = RunDir::open(&config.output_dir)?;
    dir.snapshot("preprocess", config)?;
    let ingested = parse_checkins(&config.data.checkins, &config.data.schema)?;
    let rejects = dir.path("rejects.jsonl");
    let mut w = BufWriter::new(fs::File::create(&rejects)?);
    for r in &ingested.rejects {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    if !ingested.rejects.is_empty() {
        log::warn!("{} malformed rows listed in {}", ingested.rejects.len(), rejects.display());
    }

    let (filtered, splits) = preprocess_corpus(&ingested.corpus, &config.preprocess)?;
    write_archive(&dir.path(CORPUS), &filtered)?;
    write_splits(&dir.path(SPLITS), &splits)?;

    let strata = if config.cohorts.strata {
        match stratify_users(&splits) {
            Ok(c) => Some(c),
            Err(CorpusError::TooFewUsers(n)) => {
                log::warn!("only {n} training users; strata disabled");
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    write_json(&dir.path(cohort_file(false)), &strata.clone().unwrap_or_default())?;

    let zero_shot = if config.cohorts.zero_shot_fraction > 0.0 {
        match zero_shot_holdout(&splits, config.cohorts.zero_shot_fraction, config.cohorts.zero_shot_seed) {
            Ok(c) => Some(c),
            Err(CorpusError::EmptyZeroShotEvaluation) => {
                log::warn!("held-out users have no test trajectories; zero-shot cohort not written");
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    if let Some(z) = &zero_shot {
        write_json(&dir.path(cohort_file(true)), z)?;
    }

    let users: std::collections::BTreeSet<_> = filtered.checkins.iter().map(|c| &c.user).collect();
    let report = PreprocessReport {
        records: ingested.corpus.checkins.len(),
        rejected: ingested.rejects.len(),
        filtered_checkins: filtered.checkins.len(),
        users: users.len(),
        pois: filtered.pois.len(),
        categories: splits.category_set.len(),
        timestamp_ties: count_timestamp_ties(&splits.train)
            + count_timestamp_ties(&splits.valid)
            + count_timestamp_ties(&splits.test),
        split: splits.report.clone(),
        strata: strata.map(|c| [c.inactive.len(), c.normal.len(), c.active.len()]),
        zero_shot_users: zero_shot.and_then(|z| z.zero_shot).map(|z| z.len()),
    };
    write_json(&dir.path("preprocess_report.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

struct Loaded {
    splits: CorpusSplits,
    cohorts: UserCohorts,
}

fn load_data(dir: &RunDir, zero_shot: bool) -> anyhow::Result<Loaded> {
    let corpus = read_archive(&dir.path(CORPUS))
        .context("cannot read the corpus archive (has `trailcast preprocess` run?)")?;
    let splits = read_splits(&dir.path(SPLITS), &corpus.pois)?;
    let path = dir.path(cohort_file(zero_shot));
    if zero_shot && !path.exists() {
        return Err(ConfigError(format!(
            "{} is missing; set cohorts.zero_shot_fraction and rerun preprocess",
            path.display()
        ))
        .into());
    }
    Ok(Loaded {
        splits,
        cohorts: read_json(&path)?,
    })
}

fn llm_client(config: &AppConfig) -> anyhow::Result<LlmClient> {
    let (retry, limit) = (config.llm.retry, config.llm.max_in_flight);
    Ok(match &config.llm.backend {
        BackendConfig::Live(c) => LlmClient::with_limit(ChatBackend::new(c.clone()), retry, limit),
        BackendConfig::Scripted { fixture } => {
            LlmClient::with_limit(ScriptedBackend::from_file(fixture)?, retry, limit)
        }
    })
}

fn embedder(config: &AppConfig) -> Box<dyn Embedder> {
    match &config.embedding {
        EmbeddingConfig::Hash { dim, seed } => Box::new(HashEmbedder::new(*dim, *seed)),
        EmbeddingConfig::Http(c) => Box::new(HttpEmbedder::new(c.clone())),
    }
}

struct PromptLog(Mutex<BufWriter<fs::File>>);

impl PromptLog {
    fn open(path: &Path) -> anyhow::Result<Self> {
        let f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        Ok(PromptLog(Mutex::new(BufWriter::new(f))))
    }

    fn write(&self, b: &PromptBundle) {
        let mut w = self.0.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(w, "{}", serde_json::to_string(b).expect("prompts serialize")) {
            log::warn!("prompt log write failed: {e}");
        }
    }

    fn flush(&self) -> std::io::Result<()> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).flush()
    }
}

fn fresh_memory(
    data: &Dataset<'_>,
    config: &AppConfig,
    embedder: &dyn Embedder,
) -> anyhow::Result<MemoryStore> {
    let mut memory = MemoryStore::new(embedder.dim());
    let n = build_trajectory_pool(&data.splits.train, data, &config.run, embedder, &mut memory)?;
    log::info!("embedded {n} training trajectories");
    Ok(memory)
}

fn check_failures(summary: &SplitSummary, outcomes: &[StepOutcome]) -> anyhow::Result<()> {
    if summary.completed > 0 && summary.failed == summary.completed {
        let last = outcomes
            .iter()
            .rev()
            .find_map(|o| o.error.clone())
            .unwrap_or_default();
        return Err(AllStepsFailed {
            steps: summary.failed,
            last,
        }
        .into());
    }
    if summary.failed > 0 {
        log::warn!("{} of {} steps failed and score zero", summary.failed, summary.completed);
    }
    Ok(())
}

fn print_summary(what: &str, s: &SplitSummary, path: &Path) {
    println!(
        "{what}: {}/{} steps done ({} resumed, {} failed), reflections stored: {} activity, {} location, {} skipped -> {}",
        s.skipped + s.completed,
        s.total,
        s.skipped,
        s.failed,
        s.activity_reflections,
        s.location_reflections,
        s.reflections_skipped,
        path.display()
    );
}

#[derive(Serialize)]
struct Growth<'a> {
    step: usize,
    trajectory: &'a str,
    index: usize,
    activity: usize,
    location: usize,
}

fn write_growth(path: &Path, outcomes: &[StepOutcome]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let (mut activity, mut location) = (0, 0);
    for (i, o) in outcomes.iter().enumerate() {
        activity += usize::from(o.activity_reflected);
        location += usize::from(o.location_reflected);
        if o.activity_reflected || o.location_reflected {
            let g = Growth {
                step: i,
                trajectory: &o.trajectory_id,
                index: o.step,
                activity,
                location,
            };
            writeln!(w, "{}", serde_json::to_string(&g)?)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn build_memory(config: &AppConfig, args: &RunArgs) -> anyhow::Result<()> {
    config.run.validate()?;
    let dir = RunDir::open(&config.output_dir)?;
    dir.snapshot(&named("build-memory", args.zero_shot).replace(".jsonl", ""), config)?;
    let loaded = load_data(&dir, args.zero_shot)?;
    let data = Dataset::new(&loaded.splits, &loaded.cohorts, &config.run)?;
    let embedder = embedder(config);
    let memory_path = dir.path(&named("memory", args.zero_shot));
    let partial = dir.path(&named("memory.partial", args.zero_shot));
    let partial_steps = partial.with_extension("steps");
    let stream = dir.path(&named("experience", args.zero_shot));
    let trajectories: Vec<&Trajectory> = loaded.cohorts.experience_trajectories(&loaded.splits).collect();
    let header = OutcomeHeader::new(
        Phase::Experience.name(),
        config.run.variant.name(),
        &config.run.digest(),
        &corpus_digest(&loaded.splits),
    );

    let mut resume = args.resume && partial.exists();
    let mut memory = if resume {
        let steps: usize = fs::read_to_string(&partial_steps)?.trim().parse()?;
        let ckpt_path = Checkpoint::path_for(&stream);
        if let Some(mut ckpt) = Checkpoint::load(&ckpt_path)? {
            ckpt.ensure_matches(&header)?;
            ckpt.completed = ckpt.completed.min(steps);
            ckpt.save(&ckpt_path)?;
        }
        log::info!("resuming from a memory snapshot after {steps} steps");
        load(&partial)?
    } else {
        fresh_memory(&data, config, embedder.as_ref())?
    };

    if !config.run.variant.uses_reflection() {
        log::info!("variant {} keeps no reflections; storing the trajectory pool only", config.run.variant.name());
        persist(&memory, &memory_path)?;
        println!("memory: {} pooled trajectories -> {}", memory.trajectory_pool().len(), memory_path.display());
        return Ok(());
    }

    let llm = llm_client(config)?;
    let log = args.prompt_log.as_deref().map(PromptLog::open).transpose()?;
    let sink = |b: &PromptBundle| {
        if let Some(l) = &log {
            l.write(b);
        }
    };
    let services = Services {
        llm: &llm,
        embedder: embedder.as_ref(),
        prompt_sink: Some(&sink),
    };
    let mut budget = args.limit;
    let (summary, outcomes) = loop {
        let chunk = budget.map_or(SNAPSHOT_EVERY, |b| b.min(SNAPSHOT_EVERY));
        let (summary, outcomes) = run_split_to_file(
            &stream,
            &header,
            resume,
            Phase::Experience,
            &trajectories,
            &data,
            &config.run,
            &services,
            &mut memory,
            Some(chunk),
        )?;
        persist(&memory, &partial)?;
        fs::write(&partial_steps, outcomes.len().to_string())?;
        resume = true;
        budget = budget.map(|b| b - summary.completed);
        if summary.finished() || budget == Some(0) || summary.completed == 0 {
            break (summary, outcomes);
        }
    };
    if let Some(l) = &log {
        l.flush()?;
    }
    let total = SplitSummary {
        skipped: 0,
        completed: outcomes.len(),
        failed: outcomes.iter().filter(|o| o.error.is_some()).count(),
        activity_reflections: memory.records(Level::Activity).len(),
        location_reflections: memory.records(Level::Location).len(),
        reflections_skipped: outcomes.iter().map(|o| o.reflections_skipped as usize).sum(),
        ..summary
    };
    check_failures(&total, &outcomes)?;
    write_growth(&dir.path(&named("memory_growth", args.zero_shot)), &outcomes)?;
    if !total.finished() {
        println!("stopped early; rerun with --resume to continue");
        print_summary("experience", &total, &partial);
        return Ok(());
    }
    persist(&memory, &memory_path)?;
    let _ = fs::remove_file(&partial);
    let _ = fs::remove_file(&partial_steps);
    print_summary("experience", &total, &memory_path);
    Ok(())
}

pub fn run(config: &AppConfig, args: &RunArgs) -> anyhow::Result<()> {
    config.run.validate()?;
    let dir = RunDir::open(&config.output_dir)?;
    let variant = config.run.variant.name();
    let stem = if args.zero_shot {
        format!("{variant}.zero_shot")
    } else {
        variant.to_string()
    };
    dir.snapshot(&format!("run-{stem}"), config)?;
    let loaded = load_data(&dir, args.zero_shot)?;
    let data = Dataset::new(&loaded.splits, &loaded.cohorts, &config.run)?;
    let embedder = embedder(config);
    let memory_path = dir.path(&named("memory", args.zero_shot));
    let mut memory = if memory_path.exists() {
        let m = load(&memory_path)?;
        if m.dim() != embedder.dim() {
            return Err(ConfigError(format!(
                "{} holds {}-dim vectors but the embedder makes {}",
                memory_path.display(),
                m.dim(),
                embedder.dim()
            ))
            .into());
        }
        m
    } else if config.run.variant.uses_reflection() && config.run.reflection_mode == ReflectionMode::Offline {
        return Err(ConfigError(format!(
            "{} is missing; run `trailcast build-memory` first",
            memory_path.display()
        ))
        .into());
    } else {
        fresh_memory(&data, config, embedder.as_ref())?
    };

    let llm = llm_client(config)?;
    let log = args.prompt_log.as_deref().map(PromptLog::open).transpose()?;
    let sink = |b: &PromptBundle| {
        if let Some(l) = &log {
            l.write(b);
        }
    };
    let services = Services {
        llm: &llm,
        embedder: embedder.as_ref(),
        prompt_sink: Some(&sink),
    };
    let trajectories: Vec<&Trajectory> = loaded.cohorts.evaluation_trajectories(&loaded.splits).collect();
    let header = OutcomeHeader::new(
        Phase::Evaluation.name(),
        variant,
        &config.run.digest(),
        &corpus_digest(&loaded.splits),
    );
    let stream = dir.nested("outcomes", &format!("{stem}.jsonl"))?;
    let (summary, outcomes) = run_split_to_file(
        &stream,
        &header,
        args.resume,
        Phase::Evaluation,
        &trajectories,
        &data,
        &config.run,
        &services,
        &mut memory,
        args.limit,
    )?;
    if let Some(l) = &log {
        l.flush()?;
    }
    if config.run.reflection_mode == ReflectionMode::Online && config.run.variant.uses_reflection() {
        persist(&memory, &dir.nested("outcomes", &format!("{stem}.memory.jsonl"))?)?;
    }
    check_failures(&summary, &outcomes)?;
    print_summary("eval", &summary, &stream);
    Ok(())
}

fn default_streams(dir: &RunDir) -> anyhow::Result<Vec<PathBuf>> {
    let root = dir.path("outcomes");
    let mut files: Vec<PathBuf> = match fs::read_dir(&root) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.ends_with(".jsonl") && !name.ends_with(".memory.jsonl")
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    Ok(files)
}

pub fn eval(config: &AppConfig, args: &EvalArgs) -> anyhow::Result<()> {
    let format = args.format.parse()?;
    let dir = RunDir::open(&config.output_dir)?;
    dir.snapshot("eval", config)?;
    let files = if args.files.is_empty() {
        default_streams(&dir)?
    } else {
        args.files.clone()
    };
    if files.is_empty() {
        return Err(ConfigError(format!(
            "no outcome streams under {}; run `trailcast run` first",
            dir.path("outcomes").display()
        ))
        .into());
    }
    let mut reports = Vec::new();
    for file in &files {
        let (header, outcomes) = read_outcomes(file)?;
        let zero_shot = file
            .file_stem()
            .and_then(|s| s.to_str())
            .is_some_and(|s| s.ends_with(".zero_shot"));
        let cohorts: Option<UserCohorts> = if zero_shot || config.cohorts.strata {
            let path = dir.path(cohort_file(zero_shot));
            path.exists().then(|| read_json(&path)).transpose()?
        } else {
            None
        };
        let scope = Scope {
            dataset: config.dataset.clone(),
            split: if header.phase == Phase::Experience.name() { "valid" } else { "test" }.into(),
            cohort: String::new(),
            variant: header.variant.clone(),
            config_digest: header.config_digest.clone(),
        };
        let mut r = aggregate(&outcomes, cohorts.as_ref(), &scope, args.averaging.into())
            .with_context(|| format!("cannot evaluate {}", file.display()))?;
        if zero_shot {
            r.retain(|r| r.scope.cohort == "all" || r.scope.cohort == "zero_shot");
            r.remove(0);
        }
        reports.extend(r);
    }
    let text = render_report(&reports, format)?;
    print!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}
