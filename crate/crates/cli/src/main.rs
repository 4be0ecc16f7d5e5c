//! `trailcast`: preprocess a check-in corpus, build the reflection memory,
//! run the forecaster and evaluate its outcome streams.

mod commands;
mod config;
mod exit;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trailcast::eval::Averaging;
use trailcast::pipeline::{ReflectionMode, Variant};

use config::{AppConfig, BackendConfig, ConfigError};

#[derive(Parser)]
#[command(name = "trailcast", version, about = "Zero-shot next-POI forecasting with LLMs")]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true, default_value = "trailcast.toml")]
    config: PathBuf,
    /// Overrides `output_dir`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// More log output; repeat for debug logs.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, filter, segment and split the check-ins; write cohorts.
    Preprocess(PreprocessArgs),
    /// Replay the validation split to fill the reflection memory.
    BuildMemory(RunArgs),
    /// Forecast every test step and write an outcome stream.
    Run(RunArgs),
    /// Render reports from outcome streams.
    Eval(EvalArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Overrides `data.checkins`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    gap_hours: Option<f64>,
    #[arg(long)]
    zero_shot_fraction: Option<f64>,
    #[arg(long)]
    zero_shot_seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    NoReflection,
    NoHierarchy,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Scripted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Offline,
    Online,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Number of categories the activity stage ranks.
    #[arg(short = 'k', long)]
    k_categories: Option<usize>,
    /// Reflections retrieved per stage.
    #[arg(short = 'n', long)]
    n_reflections: Option<usize>,
    #[arg(long, value_enum)]
    reflection_mode: Option<ModeArg>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Chat-completions URL for the live backend.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Response fixture for the scripted backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Use the zero-shot cohort written by `preprocess`.
    #[arg(long)]
    pub zero_shot: bool,
    /// Continue from the checkpoint of an interrupted run.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many steps.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Append every prediction prompt to this JSONL file.
    #[arg(long)]
    pub prompt_log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Outcome streams; defaults to every stream under `outcomes/`.
    pub files: Vec<PathBuf>,
    #[arg(long, default_value = "table")]
    pub format: String,
    #[arg(long, value_enum, default_value = "micro")]
    pub averaging: AveragingArg,
    /// Also write the rendered report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AveragingArg {
    Micro,
    Macro,
}

impl From<AveragingArg> for Averaging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::Micro => Averaging::Micro,
            AveragingArg::Macro => Averaging::Macro,
        }
    }
}

fn apply_preprocess(c: &mut AppConfig, a: &PreprocessArgs) {
    if let Some(p) = &a.input {
        c.data.checkins = p.clone();
    }
    if let Some(v) = a.min_count {
        c.preprocess.min_count = v;
    }
    if let Some(v) = a.gap_hours {
        c.preprocess.gap_hours = v;
    }
    if let Some(v) = a.zero_shot_fraction {
        c.cohorts.zero_shot_fraction = v;
    }
    if let Some(v) = a.zero_shot_seed {
        c.cohorts.zero_shot_seed = v;
    }
}

fn apply_run(c: &mut AppConfig, a: &RunArgs) -> Result<(), ConfigError> {
    let r = &mut c.run;
    if let Some(v) = a.variant {
        r.variant = match v {
            VariantArg::Full => Variant::Full,
            VariantArg::NoReflection => Variant::NoReflection,
            VariantArg::NoHierarchy => Variant::NoHierarchy,
        };
    }
    if let Some(m) = a.reflection_mode {
        r.reflection_mode = match m {
            ModeArg::Offline => ReflectionMode::Offline,
            ModeArg::Online => ReflectionMode::Online,
        };
    }
    r.k_categories = a.k_categories.unwrap_or(r.k_categories);
    r.n_reflections = a.n_reflections.unwrap_or(r.n_reflections);
    r.workers = a.workers.unwrap_or(r.workers);
    r.seed = a.seed.unwrap_or(r.seed);

    let live_flags = a.endpoint.is_some() || a.model.is_some() || a.api_key_env.is_some();
    match a.backend {
        Some(BackendArg::Scripted) => {
            let fixture = a
                .fixture
                .clone()
                .ok_or_else(|| ConfigError("--backend scripted needs --fixture".into()))?;
            c.llm.backend = BackendConfig::Scripted { fixture };
        }
        Some(BackendArg::Live) if !matches!(c.llm.backend, BackendConfig::Live(_)) => {
            let (Some(endpoint), Some(model)) = (a.endpoint.clone(), a.model.clone()) else {
                return Err(ConfigError("--backend live needs --endpoint and --model".into()));
            };
            c.llm.backend = BackendConfig::Live(trailcast::llm::ChatBackendConfig {
                endpoint,
                model,
                api_key_env: a.api_key_env.clone(),
                timeout_secs: 120,
            });
        }
        _ => {}
    }
    match &mut c.llm.backend {
        BackendConfig::Live(l) => {
            if let Some(v) = &a.endpoint {
                l.endpoint = v.clone();
            }
            if let Some(v) = &a.model {
                l.model = v.clone();
            }
            if let Some(v) = &a.api_key_env {
                l.api_key_env = Some(v.clone());
            }
            if a.fixture.is_some() {
                return Err(ConfigError("--fixture only applies to the scripted backend".into()));
            }
        }
        BackendConfig::Scripted { fixture } => {
            if live_flags {
                return Err(ConfigError("--endpoint/--model/--api-key-env need the live backend".into()));
            }
            if let Some(v) = &a.fixture {
                *fixture = v.clone();
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut config = AppConfig::load(&cli.config)?;
    if let Some(o) = cli.output_dir {
        config.output_dir = o;
    }
    match cli.command {
        Command::Preprocess(a) => {
            apply_preprocess(&mut config, &a);
            commands::preprocess(&config)
        }
        Command::BuildMemory(a) => {
            apply_run(&mut config, &a)?;
            commands::build_memory(&config, &a)
        }
        Command::Run(a) => {
            apply_run(&mut config, &a)?;
            commands::run(&config, &a)
        }
        Command::Eval(a) => commands::eval(&config, &a),
    }
}
