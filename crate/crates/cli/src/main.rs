//! `tom-sim`: data preparation, episode runs, batches, evaluation and
//! trace tooling. Every invocation prints one JSON summary line on stdout.
//! Exit status is 0 on success, 1 on a domain error (`error[CODE]: …` on
//! stderr) and 2 on a usage error.

mod config;
mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};
use tomsim::backend::{
    BackendError, ModelClient, RemoteChat, RemoteConfig, RemoteEmbedding, ScriptedBackend, DEFAULT_CHAT_MODEL,
    DEFAULT_EMBEDDING_MODEL,
};
use tomsim::data::{self, ColumnMap, NormalizedEpisode, Source};
use tomsim::dialogue::{Facet, Scenario};
use tomsim::engine::{self, EpisodeConfig, EpisodeResult, Manifest};
use tomsim::eval::{self, AbortPolicy, CurvePoint, EvalOptions};
use tomsim::prompts::TemplateRegistry;
use tomsim::self_agent;
use tomsim::tracker::{SvBaseline, TriggerPolicy, Variant};
use tracing::{info, Level};

use crate::config::{BackendChoice, Settings};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tom-sim", version, about = "Two-agent BDI tracking dialogue simulator")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a corpus CSV into normalized episodes (JSON Lines).
    Ingest(IngestArgs),
    /// Draw a seeded sample of episodes.
    SampleSeeds(SampleArgs),
    /// Initialize agent A's BDI from one episode.
    InitBdi(InitArgs),
    /// Run one episode.
    Simulate(SimulateArgs),
    /// Run many episodes in parallel.
    Batch(BatchArgs),
    /// Compute AT, SR and P/F/R from traces and annotations.
    Eval(EvalArgs),
    /// Export per-round similarity to the true BDI as CSV.
    ExportCurves(CurveArgs),
    /// Check a trace file against the schema.
    ValidateTrace(ValidateArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Corpus CSV file.
    #[arg(long)]
    input: PathBuf,
    /// `empathetic-dialogues` (`ed`), `persuasion-for-good` (`p4g`) or `custom`.
    #[arg(long)]
    source: Source,
    /// Column map (TOML or JSON); defaults to the source preset.
    #[arg(long)]
    columns: Option<PathBuf>,
    #[arg(long, default_value = "data/episodes.jsonl")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Normalized episodes from `ingest`.
    #[arg(long)]
    episodes: PathBuf,
    /// Number of episodes to draw.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Settings file (TOML, or JSON by extension). Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `empathetic` or `persuasion` (default empathetic).
    #[arg(long)]
    scenario: Option<Scenario>,
    /// `no_tom`, `vanilla`, `reflection` or `cr` (default cr).
    #[arg(long)]
    variant: Option<Variant>,
    /// Ledger size per facet.
    #[arg(long)]
    k: Option<usize>,
    /// Round limit.
    #[arg(long)]
    t: Option<usize>,
    /// RNG seed for BDI selection, sampling and episode ids.
    #[arg(long)]
    seed: Option<u64>,
    /// When to consider the counterfactual update: `on_increase` or `on_non_increase`.
    #[arg(long)]
    cf_trigger: Option<TriggerPolicy>,
    /// What S_v must beat: `current` or `previous` similarity.
    #[arg(long)]
    sv_baseline: Option<SvBaseline>,
    /// Chance of reversing A's initial BDI.
    #[arg(long)]
    reverse_probability: Option<f64>,
    /// Keep ledgers that grow past k instead of evicting.
    #[arg(long)]
    tolerate_overflow: bool,
    /// Record per-round similarity between B's guesses and A's true BDI.
    #[arg(long)]
    truth_similarity: bool,
    /// Model backend (default scripted).
    #[arg(long, value_enum)]
    backend: Option<BackendChoice>,
    /// Script for the scripted backend (JSON Lines).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Chat model for the remote backend.
    #[arg(long)]
    model: Option<String>,
    /// Embedding model for remote similarity scoring.
    #[arg(long)]
    embedding_model: Option<String>,
    /// Seed episodes (JSON Lines); a built-in episode is used otherwise.
    #[arg(long)]
    episodes: Option<PathBuf>,
}

impl RunArgs {
    fn settings(&self, n: Option<usize>, jobs: Option<usize>) -> Result<Settings, CliError> {
        let flags = Settings {
            scenario: self.scenario,
            variant: self.variant,
            k: self.k,
            t: self.t,
            seed: self.seed,
            n,
            jobs,
            cf_trigger: self.cf_trigger,
            sv_baseline: self.sv_baseline,
            reverse_probability: self.reverse_probability,
            tolerate_overflow: self.tolerate_overflow.then_some(true),
            truth_similarity: self.truth_similarity.then_some(true),
            backend: self.backend,
            script: self.script.clone(),
            model: self.model.clone(),
            embedding_model: self.embedding_model.clone(),
            episodes: self.episodes.clone(),
        };
        let file = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        Ok(flags.over(file))
    }
}

#[derive(Debug, Args)]
struct InitArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Position of the episode in `--episodes`.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Trace file to write (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `manifest.json` next to `--out`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Number of episodes (default 100).
    #[arg(long)]
    n: Option<usize>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Trace file to write (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Defaults to `manifest.json` next to `--out`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// One or more trace files.
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Annotation CSV (episode_id, facet, order, score_*, optional predicted).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Normalized mean score above which a guess counts as similar.
    #[arg(long, default_value_t = eval::DEFAULT_LABEL_THRESHOLD)]
    threshold: f64,
    /// Top-1 confidence at or above which B is taken to predict a match.
    #[arg(long, default_value_t = eval::DEFAULT_PREDICTED_TAU)]
    tau: f64,
    /// Count aborted episodes as failures in SR.
    #[arg(long)]
    count_aborted: bool,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV table of the same report.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    /// Trace file from `simulate` or `batch`.
    #[arg(long)]
    traces: PathBuf,
    /// Only this facet; all three by default.
    #[arg(long)]
    facet: Option<Facet>,
    /// Scorer for rounds without recorded similarity.
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendChoice,
    #[arg(long)]
    embedding_model: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    trace: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    let level = match cli.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).with_target(false).init();
    let name = command_name(&cli.command);
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{}", json!({"command": name, "status": "ok", "result": summary}));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            println!("{}", json!({"command": name, "status": "error", "code": e.code, "message": e.message}));
            ExitCode::from(1)
        }
    }
}

/// Prints clap's message plus the help of the subcommand involved.
fn usage_error(e: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
        let _ = e.print();
        return ExitCode::SUCCESS;
    }
    let _ = e.print();
    let mut root = Cli::command();
    root.build();
    let sub = std::env::args().nth(1).and_then(|name| root.find_subcommand_mut(&name).cloned());
    let help = match sub {
        Some(mut sub) => sub.render_help(),
        None => root.render_help(),
    };
    eprintln!("\n{help}");
    ExitCode::from(2)
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Ingest(_) => "ingest",
        Command::SampleSeeds(_) => "sample-seeds",
        Command::InitBdi(_) => "init-bdi",
        Command::Simulate(_) => "simulate",
        Command::Batch(_) => "batch",
        Command::Eval(_) => "eval",
        Command::ExportCurves(_) => "export-curves",
        Command::ValidateTrace(_) => "validate-trace",
    }
}

fn dispatch(command: Command) -> Result<Value, CliError> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::SampleSeeds(a) => sample_seeds(a),
        Command::InitBdi(a) => init_bdi(a),
        Command::Simulate(a) => simulate(a),
        Command::Batch(a) => batch(a),
        Command::Eval(a) => evaluate(a),
        Command::ExportCurves(a) => export_curves(a),
        Command::ValidateTrace(a) => validate(a),
    }
}

fn to_value(v: impl serde::Serialize) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn ingest(a: IngestArgs) -> Result<Value, CliError> {
    let map = match &a.columns {
        Some(path) => load_column_map(path)?,
        None => ColumnMap::preset(a.source).ok_or_else(|| CliError::config("custom sources need --columns"))?,
    };
    let (episodes, report) = data::ingest(&a.input, a.source, &map)?;
    data::write_episodes(&episodes, &a.out)?;
    Ok(json!({"out": a.out, "report": report}))
}

fn load_column_map(path: &Path) -> Result<ColumnMap, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn sample_seeds(a: SampleArgs) -> Result<Value, CliError> {
    let corpus = data::read_episodes(&a.episodes)?;
    let picked = data::sample_episodes(&corpus, a.n, a.seed)?;
    data::write_episodes(&picked, &a.out)?;
    let ids: Vec<&str> = picked.iter().map(|e| e.episode_id.as_str()).collect();
    Ok(json!({"out": a.out, "n": picked.len(), "seed": a.seed, "episode_ids": ids}))
}

/// Episodes per dataset when `--n` is not given.
const DEFAULT_BATCH_SIZE: usize = 100;

type ClientFactory = Box<dyn Fn(usize) -> Result<ModelClient, BackendError> + Sync>;

fn client_factory(settings: &Settings) -> Result<ClientFactory, CliError> {
    match settings.backend() {
        BackendChoice::Scripted => {
            let path =
                settings.script.as_ref().ok_or_else(|| CliError::config("the scripted backend needs --script"))?;
            let script = ScriptedBackend::load_script(path)?;
            Ok(Box::new(move |_| Ok(ModelClient::scripted(script.clone()))))
        }
        BackendChoice::Remote => {
            let chat_model = settings.model.clone().unwrap_or_else(|| DEFAULT_CHAT_MODEL.to_string());
            let embed_model = settings.embedding_model.clone().unwrap_or_else(|| DEFAULT_EMBEDDING_MODEL.to_string());
            let chat = Arc::new(RemoteChat::new(RemoteConfig::from_env(chat_model)?)?);
            let embed = Arc::new(RemoteEmbedding::new(RemoteConfig::from_env(embed_model)?)?);
            Ok(Box::new(move |_| Ok(ModelClient::new(chat.clone(), embed.clone()))))
        }
    }
}

/// Seed transcripts for `n` episodes: a seeded sample of `--episodes`, or
/// the built-in episode repeated.
fn seed_transcripts(settings: &Settings, scenario: Scenario, n: usize) -> Result<Vec<String>, CliError> {
    let episodes: Vec<NormalizedEpisode> = match &settings.episodes {
        Some(path) => data::sample_episodes(&data::read_episodes(path)?, n, settings.seed())?,
        None => vec![data::builtin_seed(scenario); n],
    };
    Ok(episodes.iter().map(|e| data::render_seed(e, scenario)).collect())
}

fn config_echo(config: &EpisodeConfig, settings: &Settings, n: usize, jobs: usize) -> Value {
    json!({
        "scenario": config.scenario,
        "variant": config.variant,
        "t": config.max_rounds,
        "k": config.top_k,
        "seed": settings.seed(),
        "n": n,
        "jobs": jobs,
        "cf_trigger": config.cf_trigger_policy,
        "sv_baseline": config.sv_baseline,
        "reverse_probability": config.reverse_probability,
        "strict_capacity": config.strict_capacity,
        "truth_similarity": config.track_truth_similarity,
        "backend": settings.backend(),
        "script": settings.script,
        "model": settings.model,
        "embedding_model": settings.embedding_model,
        "episodes": settings.episodes,
    })
}

fn write_outputs(
    command: &str,
    results: &[EpisodeResult],
    out: &Path,
    manifest: Option<PathBuf>,
    echo: &Value,
) -> Result<PathBuf, CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::new("E_IO", format!("{}: {e}", parent.display())))?;
    }
    engine::write_traces(results, out)?;
    let manifest_path = manifest.unwrap_or_else(|| out.parent().unwrap_or(Path::new("")).join("manifest.json"));
    let m = Manifest::new(command, echo.clone(), TemplateRegistry::embedded());
    engine::write_manifest(&manifest_path, &m)?;
    Ok(manifest_path)
}

fn outcome_summary(results: &[EpisodeResult]) -> Value {
    let aborted = results.iter().filter(|r| r.is_aborted()).count();
    let successes = results.iter().filter(|r| r.success).count();
    json!({
        "episodes": results.len(),
        "successes": successes,
        "aborted": aborted,
        "average_turn": eval::average_turn(results).ok(),
        "success_rate": eval::success_rate(results, AbortPolicy::Exclude).ok(),
    })
}

fn init_bdi(a: InitArgs) -> Result<Value, CliError> {
    let settings = a.run.settings(None, None)?;
    let config = settings.episode_config()?;
    let episode = match &settings.episodes {
        Some(path) => {
            let corpus = data::read_episodes(path)?;
            corpus.get(a.index).cloned().ok_or_else(|| {
                CliError::new("E_DATA", format!("episode index {} out of range ({} episodes)", a.index, corpus.len()))
            })?
        }
        None => data::builtin_seed(config.scenario),
    };
    let client = client_factory(&settings)?(0)?;
    let transcript = data::render_seed(&episode, config.scenario);
    let outcome = self_agent::init_bdi(&client, config.scenario, &transcript, config.top_k, config.rng_seed)?;
    Ok(
        json!({"episode_id": episode.episode_id, "index": outcome.index, "bdi": outcome.bdi, "candidates": outcome.candidates}),
    )
}

fn simulate(a: SimulateArgs) -> Result<Value, CliError> {
    let settings = a.run.settings(None, None)?;
    let config = settings.episode_config()?;
    let echo = config_echo(&config, &settings, 1, 1);
    info!(config = %echo, "simulate");
    let seeds = seed_transcripts(&settings, config.scenario, 1)?;
    let client = client_factory(&settings)?(0)?;
    let id = engine::episode_id(settings.seed(), 0);
    let result = engine::run_episode(&client, &config, &seeds[0], &id)?;
    let manifest = write_outputs("simulate", std::slice::from_ref(&result), &a.out, a.manifest, &echo)?;
    if let Some(reason) = &result.aborted {
        return Err(CliError::new("E_EPISODE_ABORTED", format!("episode {id} aborted: {reason}")));
    }
    Ok(json!({
        "config": echo,
        "out": a.out,
        "manifest": manifest,
        "episode_id": id,
        "success": result.success,
        "rounds_used": result.rounds_used,
    }))
}

fn batch(a: BatchArgs) -> Result<Value, CliError> {
    let settings = a.run.settings(a.n, a.jobs)?;
    let config = settings.episode_config()?;
    let n = settings.n.unwrap_or(DEFAULT_BATCH_SIZE);
    let jobs = settings.jobs.unwrap_or(1).max(1);
    if n == 0 {
        return Err(CliError::config("--n must be positive"));
    }
    let echo = config_echo(&config, &settings, n, jobs);
    eprintln!("config: t={} k={} n={n} jobs={jobs} seed={}", config.max_rounds, config.top_k, settings.seed());
    let seeds = seed_transcripts(&settings, config.scenario, n)?;
    let factory = client_factory(&settings)?;
    let results = engine::run_batch(&config, n, &seeds, settings.seed(), jobs, factory)?;
    let manifest = write_outputs("batch", &results, &a.out, a.manifest, &echo)?;
    Ok(json!({"config": echo, "out": a.out, "manifest": manifest, "summary": outcome_summary(&results)}))
}

fn evaluate(a: EvalArgs) -> Result<Value, CliError> {
    let mut results = Vec::new();
    for path in &a.traces {
        results.extend(engine::read_traces(path)?);
    }
    let annotations = match &a.annotations {
        Some(path) => eval::read_annotations(path)?,
        None => Vec::new(),
    };
    let policy = if a.count_aborted { AbortPolicy::CountAsFailure } else { AbortPolicy::Exclude };
    let report = eval::build_report(
        &results,
        &annotations,
        EvalOptions { threshold: a.threshold, tau: a.tau, abort_policy: policy },
    );
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::new("E_IO", e.to_string()))?;
        std::fs::write(out, text + "\n").map_err(|e| CliError::new("E_IO", format!("{}: {e}", out.display())))?;
    }
    if let Some(table) = &a.table {
        std::fs::write(table, report.to_csv())
            .map_err(|e| CliError::new("E_IO", format!("{}: {e}", table.display())))?;
    }
    Ok(to_value(&report))
}

fn export_curves(a: CurveArgs) -> Result<Value, CliError> {
    let results = engine::read_traces(&a.traces)?;
    let facets: Vec<Facet> = a.facet.map(|f| vec![f]).unwrap_or_else(|| Facet::ALL.to_vec());
    let settings =
        Settings { backend: Some(a.backend), embedding_model: a.embedding_model.clone(), ..Settings::default() };
    let client = match a.backend {
        BackendChoice::Scripted => ModelClient::scripted(ScriptedBackend::new()),
        BackendChoice::Remote => client_factory(&settings)?(0)?,
    };
    let mut points = Vec::new();
    for result in results.iter().filter(|r| !r.is_aborted()) {
        let Some(truth) = &result.true_bdi else { continue };
        for &facet in &facets {
            for trace in &result.traces {
                let recorded = trace.truth_sim.as_ref().map(|t| match facet {
                    Facet::Belief => t.belief,
                    Facet::Desire => t.desire,
                    Facet::Intention => t.intention,
                });
                let similarity = match (recorded, trace.ledgers.get(facet).first()) {
                    (Some(v), _) => v,
                    (None, Some(top)) => client.score(&top.text, truth.get(facet), None)?,
                    (None, None) => continue,
                };
                points.push(CurvePoint {
                    episode_id: result.episode_id.clone(),
                    facet,
                    round: trace.round,
                    similarity,
                });
            }
        }
    }
    eval::write_curves(&points, &a.out)?;
    Ok(json!({"out": a.out, "points": points.len()}))
}

fn validate(a: ValidateArgs) -> Result<Value, CliError> {
    let report = engine::validate_trace_file(&a.trace)?;
    if !report.is_valid() {
        for e in &report.errors {
            eprintln!("{e}");
        }
        return Err(CliError::new(
            "E_TRACE_INVALID",
            format!("{}: {} problem(s) found", a.trace.display(), report.errors.len()),
        ));
    }
    Ok(json!({"trace": a.trace, "episodes": report.episodes, "turns": report.turns}))
}
