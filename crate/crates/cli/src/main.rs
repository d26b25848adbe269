use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use claimgraph::corpus::{dataset_stats, load_dataset, ClaimCase, Split};
use claimgraph::gateway::{
    CompletionBackend, EmbeddingBackend, Gateway, HashEmbedder, HttpBackend, HttpConfig, Recorder, ReplayBackend,
    ResponseCache,
};
use claimgraph::metrics::{FileScorer, TokenOverlapScorer, ALIGNSCORE_RANGE, RQUGE_RANGE};
use claimgraph::pipeline::{evaluate_run, read_run_info, run, Mode, Pipeline, RunConfig, RunOptions, Scorers, Stage};
use claimgraph::prompts::PromptSet;
use claimgraph::verification::LabelScheme;

#[derive(Parser)]
#[command(name = "claimgraph", version, about = "Knowledge-graph contrastive reasoning for claim verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract knowledge graphs for each case.
    Extract(PipelineArgs),
    /// Extract and formulate ranked contrastive questions.
    Questions(PipelineArgs),
    /// Run through question answering.
    Answer(PipelineArgs),
    /// Run through summarisation.
    Summarise(PipelineArgs),
    /// Run through verification (same as `run`).
    Verify(PipelineArgs),
    /// Run the whole pipeline and write metrics.
    Run(PipelineArgs),
    /// Score an existing run directory.
    Eval(EvalArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
}

#[derive(Args, Debug, Default)]
struct PipelineArgs {
    /// TOML file with defaults for any of these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Built-in scheme name (liar-raw, rawfc, liar-raw-binary) or a JSON file.
    #[arg(long)]
    scheme: Option<String>,
    /// Comma-separated splits to load. A dataset directory defaults to its
    /// test split; a single file is loaded whole.
    #[arg(long, value_delimiter = ',')]
    split: Vec<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long = "model.extraction")]
    model_extraction: Option<String>,
    #[arg(long = "model.questioning")]
    model_questioning: Option<String>,
    #[arg(long = "model.answering")]
    model_answering: Option<String>,
    #[arg(long = "model.summarising")]
    model_summarising: Option<String>,
    #[arg(long = "model.verifying")]
    model_verifying: Option<String>,
    #[arg(long = "model.embedding")]
    model_embedding: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Append every model call to this JSON Lines file.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Serve model calls from a recording instead of the network.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Skip cases whose record is already complete.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    limit: Option<usize>,
    /// Comma-separated case ids to process.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    /// Run directory; defaults to runs/<dataset>-<mode>.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    /// OpenAI-compatible endpoint, e.g. https://host/v1.
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// `hash`, `hash:<dim>` or `remote`.
    #[arg(long)]
    embedder: Option<String>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    context_budget: Option<usize>,
    #[arg(long)]
    candidate_limit: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    dataset: Option<PathBuf>,
    scheme: Option<String>,
    split: Option<Vec<String>>,
    k: Option<usize>,
    mode: Option<String>,
    model: Option<FileModels>,
    workers: Option<usize>,
    record: Option<PathBuf>,
    replay: Option<PathBuf>,
    resume: Option<bool>,
    limit: Option<usize>,
    ids: Option<Vec<String>>,
    out: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    no_cache: Option<bool>,
    base_url: Option<String>,
    api_key_env: Option<String>,
    embedder: Option<String>,
    prompts_dir: Option<PathBuf>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    context_budget: Option<usize>,
    candidate_limit: Option<usize>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileModels {
    extraction: Option<String>,
    questioning: Option<String>,
    answering: Option<String>,
    summarising: Option<String>,
    verifying: Option<String>,
    embedding: Option<String>,
}

impl PipelineArgs {
    /// Fills unset flags from the config file, if one was given.
    fn merged(mut self) -> Result<Self> {
        let Some(path) = &self.config else { return Ok(self) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let f: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        macro_rules! fill {
            ($($field:ident),*) => { $( if self.$field.is_none() { self.$field = f.$field; } )* };
        }
        fill!(
            dataset, scheme, k, mode, workers, record, replay, limit, out, cache_dir, base_url, api_key_env, embedder,
            prompts_dir, temperature, max_tokens, context_budget, candidate_limit
        );
        if self.split.is_empty() {
            self.split = f.split.unwrap_or_default();
        }
        if self.ids.is_empty() {
            self.ids = f.ids.unwrap_or_default();
        }
        self.resume |= f.resume.unwrap_or(false);
        self.no_cache |= f.no_cache.unwrap_or(false);
        if let Some(m) = f.model {
            macro_rules! fill_model {
                ($($flag:ident <- $field:ident),*) => { $( if self.$flag.is_none() { self.$flag = m.$field; } )* };
            }
            fill_model!(
                model_extraction <- extraction,
                model_questioning <- questioning,
                model_answering <- answering,
                model_summarising <- summarising,
                model_verifying <- verifying,
                model_embedding <- embedding
            );
        }
        Ok(self)
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(s) = &self.scheme {
            c.scheme = s.clone();
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        if let Some(m) = &self.mode {
            c.mode = m.parse::<Mode>()?;
        }
        if let Some(w) = self.workers {
            c.workers = w;
        }
        if let Some(t) = self.temperature {
            c.temperature = t;
        }
        if let Some(t) = self.max_tokens {
            c.max_tokens = t;
        }
        if let Some(b) = self.context_budget {
            c.context_budget = b;
        }
        c.candidate_limit = self.candidate_limit;
        let m = &mut c.models;
        for (slot, flag) in [
            (&mut m.extraction, &self.model_extraction),
            (&mut m.questioning, &self.model_questioning),
            (&mut m.answering, &self.model_answering),
            (&mut m.summarising, &self.model_summarising),
            (&mut m.verifying, &self.model_verifying),
            (&mut m.embedding, &self.model_embedding),
        ] {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn gateway(&self) -> Result<Gateway> {
        let embedder_spec = self.embedder.as_deref().unwrap_or("hash");
        let (completion, remote_embedder): (Arc<dyn CompletionBackend>, Arc<dyn EmbeddingBackend>) =
            match &self.replay {
                Some(path) => {
                    let replay = Arc::new(
                        ReplayBackend::from_file(path).with_context(|| format!("reading recording {}", path.display()))?,
                    );
                    (replay.clone(), replay)
                }
                None => {
                    let mut http = HttpConfig::default();
                    if let Some(url) = &self.base_url {
                        http.base_url = url.clone();
                    }
                    if let Some(var) = &self.api_key_env {
                        http.api_key_env = Some(var.clone());
                    }
                    let backend = Arc::new(HttpBackend::new(http));
                    (backend.clone(), backend)
                }
            };
        let embedder: Arc<dyn EmbeddingBackend> = match embedder_spec.split_once(':') {
            _ if embedder_spec == "remote" => remote_embedder,
            _ if embedder_spec == "hash" => Arc::new(HashEmbedder::new(256)),
            Some(("hash", dim)) => {
                let dim: usize = dim.parse().with_context(|| format!("bad embedder dimension {dim:?}"))?;
                Arc::new(HashEmbedder::new(dim))
            }
            _ => bail!("unknown embedder {embedder_spec:?} (expected hash, hash:<dim> or remote)"),
        };
        let mut gw = Gateway::new(completion).with_embedder(embedder);
        if self.replay.is_none() && !self.no_cache {
            let dir = self.cache_dir.clone().unwrap_or_else(|| PathBuf::from(".claimgraph-cache"));
            gw = gw.with_cache(ResponseCache::new(dir));
        }
        if let Some(path) = &self.record {
            let recorder = Recorder::create(path).with_context(|| format!("creating recording {}", path.display()))?;
            gw = gw.with_recorder(recorder);
        }
        Ok(gw)
    }

    fn splits(&self, dataset: &Path) -> Result<Option<Vec<Split>>> {
        if self.split.is_empty() {
            return Ok(dataset.is_dir().then(|| vec![Split::Test]));
        }
        let parsed = self.split.iter().map(|s| s.parse::<Split>()).collect::<Result<Vec<_>, _>>()?;
        Ok(Some(parsed))
    }
}

fn load_cases(dataset: &Path, scheme: &LabelScheme, splits: Option<&[Split]>) -> Result<Vec<ClaimCase>> {
    let loaded = load_dataset(dataset, scheme, splits).with_context(|| format!("loading {}", dataset.display()))?;
    for d in &loaded.diagnostics {
        log::warn!("{d}");
    }
    if loaded.skipped() > 0 {
        eprintln!("skipped {} malformed record(s); see warnings", loaded.skipped());
    }
    Ok(loaded.cases)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn run_pipeline(args: PipelineArgs, until: Stage) -> Result<()> {
    let args = args.merged()?;
    let dataset = args.dataset.clone().context("--dataset is required")?;
    let config = args.run_config()?;
    let scheme = LabelScheme::resolve(&config.scheme)?;
    let prompts = match &args.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir).with_context(|| format!("reading prompts from {}", dir.display()))?,
        None => PromptSet::default(),
    };
    let mut cases = load_cases(&dataset, &scheme, args.splits(&dataset)?.as_deref())?;
    if !args.ids.is_empty() {
        let missing: Vec<&String> = args.ids.iter().filter(|id| !cases.iter().any(|c| &c.id == *id)).collect();
        if !missing.is_empty() {
            bail!("unknown case id(s): {missing:?}");
        }
        cases.retain(|c| args.ids.contains(&c.id));
    }
    if let Some(limit) = args.limit {
        cases.truncate(limit);
    }
    let name = dataset_name(&dataset);
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{name}-{}", config.mode)));
    let gateway = args.gateway()?;
    let pipeline = Pipeline::new(config, scheme, prompts, gateway)?;
    let opts = RunOptions {
        dir: dir.clone(),
        dataset: name,
        resume: args.resume,
        until,
    };
    let summary = run(&pipeline, &cases, &opts)?;
    eprintln!(
        "{}: {} case(s) run, {} skipped, {} failed, {} backend call(s)",
        dir.display(),
        summary.executed,
        summary.skipped,
        summary.failed,
        pipeline.gateway().backend_calls()
    );
    if until == Stage::Verify {
        print!("{}", summary.metrics.to_markdown());
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Run directory written by `run`.
    #[arg(long)]
    run: PathBuf,
    /// Overrides the scheme recorded in the run.
    #[arg(long)]
    scheme: Option<String>,
    /// Precomputed summary scores (JSON Lines).
    #[arg(long, requires = "rquge_scores")]
    align_scores: Option<PathBuf>,
    /// Precomputed question scores (JSON Lines).
    #[arg(long, requires = "align_scores")]
    rquge_scores: Option<PathBuf>,
    /// Use the token-overlap stand-ins instead of real scorers.
    #[arg(long, conflicts_with = "align_scores")]
    stub_scorers: bool,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn eval(args: EvalArgs) -> Result<()> {
    let info = read_run_info(&args.run)?;
    let scheme = LabelScheme::resolve(args.scheme.as_deref().unwrap_or(&info.config.scheme))?;
    let report = match (&args.align_scores, &args.rquge_scores, args.stub_scorers) {
        (Some(a), Some(r), _) => {
            let align = FileScorer::from_jsonl(a, "alignscore", ALIGNSCORE_RANGE)?;
            let rquge = FileScorer::from_jsonl(r, "rquge", RQUGE_RANGE)?;
            evaluate_run(&args.run, &scheme, Some(&Scorers { alignscore: &align, rquge: &rquge }))?
        }
        (_, _, true) => {
            let align = TokenOverlapScorer::alignscore_stub();
            let rquge = TokenOverlapScorer::rquge_stub();
            evaluate_run(&args.run, &scheme, Some(&Scorers { alignscore: &align, rquge: &rquge }))?
        }
        _ => evaluate_run(&args.run, &scheme, None)?,
    };
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    match args.format {
        Format::Markdown => print!("{}", report.to_markdown()),
        Format::Json => println!("{}", report.to_json()),
    }
    Ok(())
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "liar-raw")]
    scheme: String,
    #[arg(long, value_delimiter = ',')]
    split: Vec<String>,
}

fn stats(args: StatsArgs) -> Result<()> {
    let scheme = LabelScheme::resolve(&args.scheme)?;
    let splits = if args.split.is_empty() {
        None
    } else {
        Some(args.split.iter().map(|s| s.parse::<Split>()).collect::<Result<Vec<_>, _>>()?)
    };
    let cases = load_cases(&args.dataset, &scheme, splits.as_deref())?;
    let s = dataset_stats(&cases);
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => run_pipeline(a, Stage::Extract),
        Command::Questions(a) => run_pipeline(a, Stage::Questions),
        Command::Answer(a) => run_pipeline(a, Stage::Answer),
        Command::Summarise(a) => run_pipeline(a, Stage::Summarise),
        Command::Verify(a) | Command::Run(a) => run_pipeline(a, Stage::Verify),
        Command::Eval(a) => eval(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
