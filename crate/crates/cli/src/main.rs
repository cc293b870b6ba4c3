//! `evqa`: generate, score, filter and analyse evidence-based QA corpora.

mod config;
mod runs;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use evqa_core::describe::{describe, DESCRIBE_HEADER};
use evqa_core::filters::{filter_attributability, filter_source_quality};
use evqa_core::stats::{compare_settings, comparison_text, comparison_tsv, correlate_testsets, correlation_tsv, Comparison, RunScores};
use evqa_core::storage::{corpus_to_string, read_corpus, read_jsonl, write_corpus, write_jsonl, StorageError};
use evqa_core::{render_prompt, Corpus, Question, SegmentationRules, Source};
use evqa_pipeline::canned::CannedLlm;
use evqa_pipeline::chat::{HttpChatClient, RetryPolicy};
use evqa_pipeline::datagen::{self, DatagenError, GenerationConfig, QuestionSources};
use evqa_pipeline::entail::{Backend, BackendConfig, LlmJudge};
use evqa_pipeline::score::Scorer;
use evqa_pipeline::{CachingClient, ChatClient, TranscriptStore};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use url::Url;

use crate::config::Config;

const DEFAULT_NLI_MODEL: &str = "attrscore-flan-t5-xl";
const DEFAULT_JUDGE_MODEL: &str = "gpt-4-0613";

#[derive(Debug, Parser)]
#[command(name = "evqa", version, about = "Evidence-based QA corpus toolkit")]
struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory of recorded chat transcripts. Without a chat endpoint the
    /// run is replay-only.
    #[arg(long, global = true)]
    transcripts_dir: Option<PathBuf>,
    /// Requests in flight per stage.
    #[arg(long, global = true, default_value_t = 8)]
    concurrency: usize,
    /// Answer chat requests with the built-in deterministic responder
    /// instead of an endpoint. Useful for demos and offline tests.
    #[arg(long, global = true)]
    canned: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus generation stages.
    Gen {
        #[command(subcommand)]
        stage: GenStage,
    },
    /// Parse answers and score them.
    Score(ScoreArgs),
    /// Tier filters.
    Filter {
        #[command(subcommand)]
        filter: FilterCmd,
    },
    /// Reports over corpora and run scores.
    Stats {
        #[command(subcommand)]
        report: StatsCmd,
    },
    /// Print the instruction prompt for a `{question, sources}` JSON fixture.
    RenderPrompt {
        fixture: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum GenStage {
    Topics {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Questions {
        #[arg(long)]
        topics: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Source paragraphs for every question.
    Sources {
        #[arg(long)]
        questions: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Instructions {
        #[arg(long)]
        sources: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Answers {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Every stage in one run.
    All {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Stub,
    Nli,
    Judge,
}

#[derive(Debug, clap::Args)]
struct ScoreArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Vec<BackendArg>,
    /// Base URL of an entailment service; repeat for an ensemble.
    #[arg(long)]
    nli_endpoint: Vec<Url>,
    /// Model id per --nli-endpoint, in order.
    #[arg(long)]
    nli_model: Vec<String>,
    /// Chat-completions URL for the judge backend.
    #[arg(long)]
    judge_endpoint: Option<Url>,
    #[arg(long)]
    judge_model: Option<String>,
    /// Offline token-overlap backend only.
    #[arg(long)]
    stub: bool,
}

#[derive(Debug, Subcommand)]
enum FilterCmd {
    SourceQuality {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Attributability {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Tsv,
    Text,
}

#[derive(Debug, clap::Args)]
struct RunsArgs {
    /// TSV of setting, testset, metric, value.
    #[arg(long)]
    runs: Vec<PathBuf>,
    /// Scored corpus as SETTING=TESTSET=PATH.
    #[arg(long)]
    corpus: Vec<String>,
    /// One value per record instead of one per corpus.
    #[arg(long)]
    per_record: bool,
}

#[derive(Debug, Subcommand)]
enum StatsCmd {
    Describe {
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
        /// Row label per corpus; defaults to the file stem.
        #[arg(long)]
        label: Vec<String>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Corpus-level score means in percent.
    Scores {
        #[arg(required = true)]
        corpora: Vec<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Compare {
        #[command(flatten)]
        runs: RunsArgs,
        /// `A<B`, `A>B` or `A!=B`.
        #[arg(long, required = true)]
        compare: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    Correlate {
        #[command(flatten)]
        runs: RunsArgs,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        reference: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Validation(String),
    Endpoint(String),
    Failure(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 64,
            CliError::Validation(_) | CliError::Failure(_) => 1,
            CliError::Endpoint(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Validation(m) | CliError::Endpoint(m) | CliError::Failure(m) => m,
        }
    }
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        match e {
            StorageError::Io { .. } => CliError::Failure(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Endpoint(_) => CliError::Endpoint(e.to_string()),
            DatagenError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<config::ConfigError> for CliError {
    fn from(e: config::ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Serialize, Deserialize)]
struct TopicLine {
    topic: String,
}

#[derive(Debug, Deserialize)]
struct FixtureSource {
    name: String,
    content: String,
}

#[derive(Debug, Deserialize)]
struct PromptFixture {
    question: String,
    sources: Vec<FixtureSource>,
}

struct Ctx {
    config: Config,
    seed: u64,
    transcripts_dir: Option<PathBuf>,
    concurrency: usize,
    canned: bool,
    permits: Arc<Semaphore>,
}

impl Ctx {
    fn generation(&self) -> Result<GenerationConfig> {
        Ok(self.config.generation(self.seed, self.concurrency)?)
    }

    fn rules(&self) -> Result<SegmentationRules> {
        match self.config.path("segmentation_rules") {
            Some(p) => SegmentationRules::from_file(&p).map_err(|e| CliError::Usage(e.to_string())),
            None => Ok(SegmentationRules::default()),
        }
    }

    fn http_chat(&self, endpoint: Url) -> Result<HttpChatClient> {
        let timeout = self.config.parsed::<u64>("chat.timeout_ms")?.unwrap_or(60_000);
        let retry = RetryPolicy { retry_budget: self.config.parsed("chat.retry_budget")?.unwrap_or(3), ..RetryPolicy::default() };
        HttpChatClient::new(endpoint, Duration::from_millis(timeout), retry, self.permits.clone())
            .map(|c| c.with_api_key(std::env::var("EVQA_API_KEY").ok()))
            .map_err(|e| CliError::Failure(e.to_string()))
    }

    /// Transcript-backed client with an optional live upstream.
    fn chat_client(&self, endpoint: Option<Url>) -> Result<Arc<dyn ChatClient>> {
        let upstream: Option<Arc<dyn ChatClient>> = match endpoint {
            _ if self.canned => Some(Arc::new(CannedLlm)),
            Some(url) => Some(Arc::new(self.http_chat(url)?)),
            None => None,
        };
        match (&self.transcripts_dir, upstream) {
            (Some(dir), upstream) => {
                let store = TranscriptStore::open(dir).map_err(|e| CliError::Failure(e.to_string()))?;
                Ok(Arc::new(CachingClient::new(Arc::new(store), upstream)))
            }
            (None, Some(up)) => Ok(up),
            (None, None) => Err(CliError::Usage("no chat.endpoint configured and no --transcripts-dir to replay".into())),
        }
    }

    fn generator_client(&self) -> Result<Arc<dyn ChatClient>> {
        self.chat_client(self.config.url("chat.endpoint")?)
    }
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Failure(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| CliError::Failure(e.to_string()))
        }
    }
}

fn emit_corpus(output: Option<&Path>, corpus: &Corpus) -> Result<()> {
    match output {
        Some(p) => Ok(write_corpus(corpus, p)?),
        None => emit(None, &corpus_to_string(corpus)),
    }
}

fn emit_jsonl<T: Serialize>(output: Option<&Path>, items: &[T]) -> Result<()> {
    match output {
        Some(p) => Ok(write_jsonl(p, items)?),
        None => {
            let mut text = String::new();
            for item in items {
                text.push_str(&serde_json::to_string(item).map_err(|e| CliError::Failure(e.to_string()))?);
                text.push('\n');
            }
            emit(None, &text)
        }
    }
}

async fn run_gen(ctx: &Ctx, stage: GenStage) -> Result<()> {
    let g = ctx.generation()?;
    match stage {
        GenStage::Topics { output } => {
            let client = ctx.generator_client()?;
            let topics = datagen::generate_topics(&g, client.as_ref()).await?;
            let lines: Vec<TopicLine> = topics.into_iter().map(|topic| TopicLine { topic }).collect();
            emit_jsonl(output.as_deref(), &lines)
        }
        GenStage::Questions { topics, output } => {
            let client = ctx.generator_client()?;
            let topics: Vec<String> = read_jsonl::<TopicLine>(&topics)?.into_iter().map(|t| t.topic).collect();
            let questions = datagen::questions_stage(&topics, &g, client.as_ref()).await?;
            emit_jsonl(output.as_deref(), &questions)
        }
        GenStage::Sources { questions, output } => {
            let client = ctx.generator_client()?;
            let questions: Vec<Question> = read_jsonl(&questions)?;
            let sources = datagen::sources_stage(&questions, &g, client.as_ref()).await?;
            emit_jsonl(output.as_deref(), &sources)
        }
        GenStage::Instructions { sources, output } => {
            let items: Vec<QuestionSources> = read_jsonl(&sources)?;
            let mut corpus = datagen::instructions_stage(&items, &g)?;
            corpus.manifest.provenance = datagen::provenance(&g);
            emit_corpus(output.as_deref(), &corpus)
        }
        GenStage::Answers { input, output } => {
            let client = ctx.generator_client()?;
            let corpus = read_corpus(&input)?;
            let mut answered = datagen::answers_stage(corpus, &g, client.as_ref()).await?;
            answered.manifest.records = answered.records.len();
            emit_corpus(output.as_deref(), &answered)
        }
        GenStage::All { output } => {
            let client = ctx.generator_client()?;
            let corpus = datagen::run_pipeline(&g, client.as_ref()).await?;
            emit_corpus(output.as_deref(), &corpus)
        }
    }
}

fn backends(ctx: &Ctx, args: &ScoreArgs) -> Result<Vec<Backend>> {
    let mut kinds = args.backend.clone();
    if args.stub {
        if kinds.iter().any(|k| *k != BackendArg::Stub) || !args.nli_endpoint.is_empty() || args.judge_endpoint.is_some() {
            return Err(CliError::Usage("--stub cannot be combined with remote backends".into()));
        }
        kinds = vec![BackendArg::Stub];
    }
    if kinds.is_empty() {
        if !args.nli_endpoint.is_empty() {
            kinds.push(BackendArg::Nli);
        }
        if args.judge_endpoint.is_some() {
            kinds.push(BackendArg::Judge);
        }
    }
    if kinds.is_empty() {
        return Err(CliError::Usage("no entailment backend selected (use --stub, --backend, --nli-endpoint or --judge-endpoint)".into()));
    }
    kinds.dedup();
    let mut out = Vec::new();
    for kind in kinds {
        match kind {
            BackendArg::Stub => out.push(Backend::StubOverlap),
            BackendArg::Nli => {
                let mut endpoints = args.nli_endpoint.clone();
                if endpoints.is_empty() {
                    endpoints.extend(ctx.config.url("nli.endpoint")?);
                }
                if endpoints.is_empty() {
                    return Err(CliError::Usage("nli backend needs --nli-endpoint or nli.endpoint".into()));
                }
                for (i, url) in endpoints.into_iter().enumerate() {
                    let model = args
                        .nli_model
                        .get(i)
                        .cloned()
                        .or_else(|| ctx.config.get("nli.model").map(str::to_string))
                        .unwrap_or_else(|| DEFAULT_NLI_MODEL.into());
                    let mut cfg = BackendConfig::remote_nli(url, model);
                    if let Some(t) = ctx.config.parsed("nli.timeout_ms")? {
                        cfg.timeout_ms = t;
                    }
                    if let Some(r) = ctx.config.parsed("nli.retry_budget")? {
                        cfg.retry_budget = r;
                    }
                    out.push(Backend::from_config(&cfg, ctx.permits.clone()).map_err(|e| CliError::Usage(e.to_string()))?);
                }
            }
            BackendArg::Judge => {
                let url = match &args.judge_endpoint {
                    Some(u) => Some(u.clone()),
                    None => ctx.config.url("judge.endpoint")?,
                };
                if url.is_none() && ctx.transcripts_dir.is_none() && !ctx.canned {
                    return Err(CliError::Usage("judge backend needs --judge-endpoint or judge.endpoint".into()));
                }
                let model = args
                    .judge_model
                    .clone()
                    .or_else(|| ctx.config.get("judge.model").map(str::to_string))
                    .unwrap_or_else(|| DEFAULT_JUDGE_MODEL.into());
                out.push(Backend::LlmJudge(LlmJudge::new(ctx.chat_client(url)?, model)));
            }
        }
    }
    Ok(out)
}

async fn run_score(ctx: &Ctx, args: ScoreArgs) -> Result<()> {
    let backends = backends(ctx, &args)?;
    let corpus = read_corpus(&args.input)?;
    let scorer = Scorer::new(backends, ctx.rules()?, ctx.concurrency);
    let scored = scorer.score_corpus(&corpus).await.map_err(|e| {
        if e.is_endpoint() {
            CliError::Endpoint(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    })?;
    emit_corpus(args.output.as_deref(), &scored)
}

fn run_filter(filter: FilterCmd) -> Result<()> {
    let (input, output, source_quality) = match filter {
        FilterCmd::SourceQuality { input, output } => (input, output, true),
        FilterCmd::Attributability { input, output } => (input, output, false),
    };
    let corpus = read_corpus(&input)?;
    let out = if source_quality { filter_source_quality(&corpus) } else { filter_attributability(&corpus) }
        .map_err(|e| CliError::Validation(e.to_string()))?;
    log::info!("{} of {} records kept", out.records.len(), corpus.records.len());
    emit_corpus(output.as_deref(), &out)
}

fn collect_runs(args: &RunsArgs) -> Result<RunScores> {
    let mut runs = RunScores::new();
    for p in &args.runs {
        runs::read_runs_tsv(p, &mut runs).map_err(|e| CliError::Validation(e.to_string()))?;
    }
    for arg in &args.corpus {
        let (setting, testset, path) = runs::parse_corpus_arg(arg).map_err(|e| CliError::Usage(e.to_string()))?;
        let corpus = read_corpus(Path::new(&path))?;
        runs::add_corpus(&mut runs, &setting, &testset, &corpus, args.per_record).map_err(CliError::Validation)?;
    }
    if runs.is_empty() {
        return Err(CliError::Usage("no runs given (use --runs or --corpus)".into()));
    }
    Ok(runs)
}

fn label_for(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

fn run_stats(ctx: &Ctx, report: StatsCmd) -> Result<()> {
    let validation = |e: evqa_core::stats::StatsError| CliError::Validation(e.to_string());
    match report {
        StatsCmd::Describe { corpora, label, output } => {
            if !label.is_empty() && label.len() != corpora.len() {
                return Err(CliError::Usage("give one --label per corpus or none".into()));
            }
            let rules = ctx.rules()?;
            let mut text = format!("{DESCRIBE_HEADER}\n");
            for (i, path) in corpora.iter().enumerate() {
                let corpus = read_corpus(path)?;
                let stats = describe(&corpus, &rules).map_err(|e| CliError::Validation(e.to_string()))?;
                let name = label.get(i).cloned().unwrap_or_else(|| label_for(path));
                text.push_str(&stats.tsv_row(&name));
                text.push('\n');
            }
            emit(output.as_deref(), &text)
        }
        StatsCmd::Scores { corpora, output } => {
            let mut text = String::from("corpus\ttier\trecords");
            for m in runs::METRICS {
                text.push_str(&format!("\t{m}"));
            }
            text.push('\n');
            for path in &corpora {
                let corpus = read_corpus(path)?;
                let s = evqa_core::scoring::corpus_scores(&corpus).map_err(|e| CliError::Validation(e.to_string()))?;
                text.push_str(&format!("{}\t{}\t{}", label_for(path), corpus.tier, s.records));
                for m in runs::METRICS {
                    match s.get(m) {
                        Ok(v) => text.push_str(&format!("\t{v:.2}")),
                        Err(_) => text.push_str("\tNA"),
                    }
                }
                text.push('\n');
            }
            emit(output.as_deref(), &text)
        }
        StatsCmd::Compare { runs, compare, format, output } => {
            let runs = collect_runs(&runs)?;
            let comparisons = compare
                .iter()
                .map(|c| Comparison::parse(c).ok_or_else(|| CliError::Usage(format!("bad comparison `{c}`"))))
                .collect::<Result<Vec<_>>>()?;
            let rows = compare_settings(&runs, &comparisons).map_err(validation)?;
            let text = match format {
                Format::Tsv => comparison_tsv(&rows),
                Format::Text => comparison_text(&rows),
            };
            emit(output.as_deref(), &text)
        }
        StatsCmd::Correlate { runs, metric, reference, output } => {
            let runs = collect_runs(&runs)?;
            let rows = correlate_testsets(&runs, &metric, &reference).map_err(validation)?;
            emit(output.as_deref(), &correlation_tsv(&rows))
        }
    }
}

fn run_render(fixture: &Path, output: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(fixture).map_err(|e| CliError::Failure(format!("{}: {e}", fixture.display())))?;
    let f: PromptFixture = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", fixture.display())))?;
    let sources: Vec<Source> = f.sources.into_iter().map(|s| Source::imported(s.name, s.content)).collect();
    emit(output, &render_prompt(&f.question, &sources))
}

async fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let concurrency = cli.concurrency.max(1);
    let ctx = Ctx {
        config,
        seed: cli.seed,
        transcripts_dir: cli.transcripts_dir,
        concurrency,
        canned: cli.canned,
        permits: Arc::new(Semaphore::new(concurrency)),
    };
    match cli.command {
        Command::Gen { stage } => run_gen(&ctx, stage).await,
        Command::Score(args) => run_score(&ctx, args).await,
        Command::Filter { filter } => run_filter(filter),
        Command::Stats { report } => run_stats(&ctx, report),
        Command::RenderPrompt { fixture, output } => run_render(&fixture, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(64),
            };
        }
    };
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).code(), 64);
        assert_eq!(CliError::Validation("x".into()).code(), 1);
        assert_eq!(CliError::Endpoint("x".into()).code(), 2);
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
