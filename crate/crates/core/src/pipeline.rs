//! Per-case orchestration of the stages and the resumable run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! run.json              configuration and digest
//! manifest.jsonl        one {"id": ...} line per case, in first-seen order
//! records/<id>.json     one PipelineRecord per case
//! timings/<id>.json     wall-clock per stage (not part of the record)
//! metrics.json          classification report over the manifest
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contrastive::{formulate, ContrastiveQuestion, FormulateOptions, RankingTrace};
use crate::corpus::ClaimCase;
use crate::extraction::{extract_case, ExtractionConfig, FewShotExamples};
use crate::gateway::{DecodeParams, Gateway, StageModel};
use crate::kg::KnowledgeGraph;
use crate::metrics::{
    aggregate_corpus, distance_weight, prf, weighted_alignscore_in, weighted_rquge_in, ClaimScores, ExternalScore,
    ExternalScorer, MetricsError, MetricsReport,
};
use crate::prompts::{render, PromptSet};
use crate::reasoning::{answer_questions, assemble_context, summarise, ContrastiveSummary, QAPair, ReasoningOptions};
use crate::text::sha256_hex;
use crate::verification::{classify, verify, LabelScheme, Verdict, VerifyOptions};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no questions could be parsed from model output: {raw:?}")]
    NoQuestions { raw: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    Naive,
    KgAugmentOnly,
    LlmQuestions,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Naive => "naive",
            Mode::KgAugmentOnly => "kg-augment-only",
            Mode::LlmQuestions => "llm-questions",
        }
    }

    pub fn stages(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Mode::Full => &[Extract, Questions, Answer, Summarise, Verify],
            Mode::Naive => &[Verify],
            Mode::KgAugmentOnly => &[Extract, Verify],
            Mode::LlmQuestions => &[Questions, Answer, Summarise, Verify],
        }
    }

    /// Last stage this mode runs when stopping after `until`.
    pub fn final_stage(self, until: Stage) -> Option<Stage> {
        self.stages().iter().copied().rfind(|s| *s <= until)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Mode::Full),
            "naive" => Ok(Mode::Naive),
            "kg-augment-only" => Ok(Mode::KgAugmentOnly),
            "llm-questions" => Ok(Mode::LlmQuestions),
            other => Err(PipelineError::Config(format!(
                "unknown mode {other:?} (expected full, naive, kg-augment-only or llm-questions)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Questions,
    Answer,
    Summarise,
    Verify,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Questions => "questions",
            Stage::Answer => "answer",
            Stage::Summarise => "summarise",
            Stage::Verify => "verify",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageModels {
    pub extraction: String,
    pub questioning: String,
    pub answering: String,
    pub summarising: String,
    pub verifying: String,
    pub embedding: String,
}

impl Default for StageModels {
    fn default() -> Self {
        Self {
            extraction: "claude-3-haiku-20240307".into(),
            questioning: "gpt-4o".into(),
            answering: "gpt-4o".into(),
            summarising: "gpt-4o".into(),
            verifying: "gpt-4o".into(),
            embedding: "text-embedding-3-small".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scheme: String,
    pub k: usize,
    pub mode: Mode,
    pub models: StageModels,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Cases processed in parallel.
    pub workers: usize,
    /// Answer calls in flight per case.
    pub answer_concurrency: usize,
    /// Bytes of report text per prompt.
    pub context_budget: usize,
    pub extraction_retries: u32,
    pub candidate_limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scheme: "liar-raw".into(),
            k: 5,
            mode: Mode::Full,
            models: StageModels::default(),
            temperature: 0.0,
            max_tokens: 1024,
            workers: 4,
            answer_concurrency: 5,
            context_budget: 24_000,
            extraction_retries: 2,
            candidate_limit: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PipelineError::Config(format!("temperature {} out of range", self.temperature)));
        }
        Ok(())
    }

    fn stage(&self, model: &str) -> StageModel {
        StageModel {
            model: model.to_string(),
            params: DecodeParams {
                temperature: self.temperature,
                max_tokens: self.max_tokens,
            },
        }
    }
}

/// Few-shot material for the prompt-generated question baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionExamples {
    pub claim: String,
    pub reports: String,
    pub questions: Vec<String>,
}

impl QuestionExamples {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../prompts/question_examples.json")).expect("built-in examples are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Done,
    Failed,
}

/// Audit trail of one case. Sections a mode does not produce are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRecord {
    pub case_id: String,
    pub mode: Mode,
    pub status: Status,
    pub last_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub claim: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<KnowledgeGraph>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked: Option<Vec<ContrastiveQuestion>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<RankingTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questions_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qa_pairs: Option<Vec<QAPair>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<ContrastiveSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub config_digest: String,
}

impl PipelineRecord {
    fn new(case: &ClaimCase, mode: Mode, digest: &str) -> Self {
        Self {
            case_id: case.id.clone(),
            mode,
            status: Status::Done,
            last_stage: None,
            error: None,
            claim: case.claim.clone(),
            gold_label: case.gold_label.clone(),
            graph: None,
            candidate_count: None,
            ranked: None,
            trace: None,
            questions_raw: None,
            questions: None,
            qa_pairs: None,
            summary: None,
            summary_raw: None,
            verdict: None,
            config_digest: digest.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record encodes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub case_id: String,
    pub stages: Vec<(Stage, u64)>,
}

/// Splits model output into questions: list markers and numbering are
/// stripped, blank and fence lines skipped, at most five kept.
pub fn parse_llm_questions(raw: &str) -> Result<Vec<String>, PipelineError> {
    let questions: Vec<String> = raw
        .lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty() && !l.chars().all(|c| c == '"' || c == '`'))
        .take(5)
        .map(str::to_string)
        .collect();
    if questions.is_empty() {
        return Err(PipelineError::NoQuestions { raw: raw.to_string() });
    }
    Ok(questions)
}

fn strip_marker(line: &str) -> &str {
    let mut s = line.trim();
    s = s.trim_start_matches(['-', '*', '•', '+']).trim_start();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
            s = r.trim_start();
        }
    } else if let Some(r) = s.strip_prefix(['Q', 'q']) {
        let d = r.chars().take_while(char::is_ascii_digit).count();
        if d > 0 {
            if let Some(r2) = r[d..].strip_prefix(['.', ')', ':']) {
                s = r2.trim_start();
            }
        }
    }
    s.trim_matches('"').trim()
}

/// Resolved configuration plus everything needed to process cases.
pub struct Pipeline {
    config: RunConfig,
    scheme: LabelScheme,
    prompts: PromptSet,
    extraction_examples: FewShotExamples,
    question_examples: QuestionExamples,
    gateway: Gateway,
    digest: String,
}

impl Pipeline {
    pub fn new(config: RunConfig, scheme: LabelScheme, prompts: PromptSet, gateway: Gateway) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut p = Self {
            config,
            scheme,
            prompts,
            extraction_examples: FewShotExamples::builtin(),
            question_examples: QuestionExamples::builtin(),
            gateway,
            digest: String::new(),
        };
        p.digest = p.compute_digest();
        Ok(p)
    }

    pub fn with_extraction_examples(mut self, examples: FewShotExamples) -> Self {
        self.extraction_examples = examples;
        self.digest = self.compute_digest();
        self
    }

    pub fn with_question_examples(mut self, examples: QuestionExamples) -> Self {
        self.question_examples = examples;
        self.digest = self.compute_digest();
        self
    }

    /// Hash over every input that can change a record. Worker counts are
    /// excluded since they never affect outputs.
    fn compute_digest(&self) -> String {
        let c = &self.config;
        let view = serde_json::json!({
            "k": c.k,
            "mode": c.mode,
            "models": c.models,
            "temperature": c.temperature,
            "max_tokens": c.max_tokens,
            "context_budget": c.context_budget,
            "extraction_retries": c.extraction_retries,
            "candidate_limit": c.candidate_limit,
            "scheme": self.scheme,
            "prompts": self.prompts,
            "extraction_examples": self.extraction_examples,
            "question_examples": self.question_examples,
        });
        sha256_hex(view.to_string())
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Runs the mode's stages up to and including `until`. Failures end the
    /// case and are recorded, never propagated.
    pub fn run_case(&self, case: &ClaimCase, until: Stage) -> (PipelineRecord, StageTimings) {
        let mut record = PipelineRecord::new(case, self.config.mode, &self.digest);
        let mut timings = StageTimings {
            case_id: case.id.clone(),
            stages: Vec::new(),
        };
        let reports = case.report_texts();
        for &stage in self.config.mode.stages().iter().filter(|s| **s <= until) {
            let started = Instant::now();
            let outcome = self.run_stage(stage, case, &reports, &mut record);
            timings.stages.push((stage, started.elapsed().as_millis() as u64));
            match outcome {
                Ok(()) => record.last_stage = Some(stage),
                Err(message) => {
                    log::warn!("case {}: {stage} failed: {message}", case.id);
                    record.status = Status::Failed;
                    record.error = Some(format!("{stage}: {message}"));
                    break;
                }
            }
        }
        (record, timings)
    }

    fn run_stage(&self, stage: Stage, case: &ClaimCase, reports: &[String], record: &mut PipelineRecord) -> Result<(), String> {
        let c = &self.config;
        match stage {
            Stage::Extract => {
                let mut cfg = ExtractionConfig::new(c.stage(&c.models.extraction));
                cfg.max_retries = c.extraction_retries;
                cfg.examples = self.extraction_examples.clone();
                let graph = extract_case(case, &cfg, &self.prompts, &self.gateway).map_err(|e| e.to_string())?;
                record.graph = Some(graph);
            }
            Stage::Questions if c.mode == Mode::LlmQuestions => {
                let ex = &self.question_examples;
                let prompt = render(
                    &self.prompts.generate_questions,
                    &[
                        ("claim example", &ex.claim),
                        ("reports examples", &ex.reports),
                        ("contrastive questions examples", &ex.questions.join("\n")),
                        ("claim", &case.claim),
                        ("reports", &assemble_context(reports, c.context_budget)),
                    ],
                );
                let stage = c.stage(&c.models.questioning);
                let out = self.gateway.complete(&stage.request(prompt)).map_err(|e| e.to_string())?;
                record.questions_raw = Some(out.text.clone());
                record.questions = Some(parse_llm_questions(&out.text).map_err(|e| e.to_string())?);
            }
            Stage::Questions => {
                let graph = record.graph.as_ref().ok_or("no graph")?;
                let opts = FormulateOptions {
                    k: c.k,
                    embedding_model: &c.models.embedding,
                    candidate_limit: c.candidate_limit,
                };
                let f = formulate(graph, &self.gateway, &opts).map_err(|e| e.to_string())?;
                record.candidate_count = Some(f.candidate_count);
                record.questions = Some(f.questions.iter().map(|q| q.text.clone()).collect());
                record.ranked = Some(f.questions);
                record.trace = Some(f.trace);
            }
            Stage::Answer => {
                let questions = record.questions.as_deref().ok_or("no questions")?;
                let stage = c.stage(&c.models.answering);
                let opts = ReasoningOptions {
                    stage: &stage,
                    template: &self.prompts.answer,
                    context_budget: c.context_budget,
                    concurrency: c.answer_concurrency,
                };
                record.qa_pairs = Some(answer_questions(questions, reports, &case.claim, &self.gateway, &opts));
            }
            Stage::Summarise => {
                let pairs = record.qa_pairs.as_deref().ok_or("no answers")?;
                let stage = c.stage(&c.models.summarising);
                let out = summarise(&case.claim, pairs, &self.gateway, &stage, &self.prompts.summarise)
                    .map_err(|e| e.to_string())?;
                record.summary = Some(out.summary);
                record.summary_raw = Some(out.raw);
            }
            Stage::Verify => {
                let stage = c.stage(&c.models.verifying);
                let opts = VerifyOptions {
                    stage: &stage,
                    template: &self.prompts.verify,
                };
                let verdict = match c.mode {
                    Mode::Full | Mode::LlmQuestions => {
                        let summary = record.summary.as_ref().ok_or("no summary")?;
                        verify(&case.claim, summary, &self.scheme, &self.gateway, &opts)
                    }
                    Mode::Naive => {
                        let context = assemble_context(reports, c.context_budget);
                        classify(&case.claim, &context, &self.scheme, &self.gateway, &opts)
                    }
                    Mode::KgAugmentOnly => {
                        let graph = record.graph.as_ref().ok_or("no graph")?;
                        let context = format!(
                            "{}\n\n--- Knowledge graph ---\n{}",
                            assemble_context(reports, c.context_budget),
                            graph.to_canonical_json()
                        );
                        classify(&case.claim, &context, &self.scheme, &self.gateway, &opts)
                    }
                }
                .map_err(|e| e.to_string())?;
                record.verdict = Some(verdict);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dir: PathBuf,
    pub dataset: String,
    pub resume: bool,
    pub until: Stage,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub dataset: String,
    pub config: RunConfig,
    pub config_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
}

/// File-system safe rendering of a case id.
pub fn record_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let path = dir.join("manifest.jsonl");
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&path)(e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<ManifestLine>(l)
                .map(|m| m.id)
                .map_err(|source| PipelineError::Json {
                    path: path.clone(),
                    source,
                })
        })
        .collect()
}

fn extend_manifest(dir: &Path, cases: &[ClaimCase]) -> Result<(), PipelineError> {
    let existing: HashSet<String> = read_manifest(dir)?.into_iter().collect();
    let path = dir.join("manifest.jsonl");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    let mut added = HashSet::new();
    for c in cases {
        if !existing.contains(&c.id) && added.insert(c.id.as_str()) {
            let line = serde_json::to_string(&ManifestLine { id: c.id.clone() }).expect("manifest line encodes");
            writeln!(file, "{line}").map_err(io_err(&path))?;
        }
    }
    file.flush().map_err(io_err(&path))
}

pub fn read_record(dir: &Path, id: &str) -> Result<Option<PipelineRecord>, PipelineError> {
    let path = dir.join("records").join(record_file_name(id));
    match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| PipelineError::Json { path, source }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Runs every case into `opts.dir`, then writes `metrics.json`.
pub fn run(pipeline: &Pipeline, cases: &[ClaimCase], opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    let records_dir = opts.dir.join("records");
    let timings_dir = opts.dir.join("timings");
    for d in [&records_dir, &timings_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let info = RunInfo {
        dataset: opts.dataset.clone(),
        config: pipeline.config.clone(),
        config_digest: pipeline.digest.clone(),
    };
    let info_path = opts.dir.join("run.json");
    write_atomic(&info_path, &(serde_json::to_string_pretty(&info).expect("run info encodes") + "\n"))?;
    extend_manifest(&opts.dir, cases)?;

    let target = pipeline.config.mode.final_stage(opts.until);
    let mut pending = Vec::new();
    let mut skipped = 0;
    for case in cases {
        if opts.resume {
            if let Some(r) = read_record(&opts.dir, &case.id)? {
                if r.status == Status::Done && r.last_stage == target && r.config_digest == pipeline.digest {
                    skipped += 1;
                    continue;
                }
            }
        }
        pending.push(case);
    }

    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let fatal: Mutex<Option<PipelineError>> = Mutex::new(None);
    let workers = pipeline.config.workers.min(pending.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if fatal.lock().unwrap().is_some() {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(case) = pending.get(i) else { break };
                let (record, timings) = pipeline.run_case(case, opts.until);
                if record.status == Status::Failed {
                    failed.fetch_add(1, Ordering::SeqCst);
                }
                let name = record_file_name(&case.id);
                let result = write_atomic(&records_dir.join(&name), &record.to_json()).and_then(|_| {
                    let t = serde_json::to_string(&timings).expect("timings encode");
                    write_atomic(&timings_dir.join(&name), &t)
                });
                if let Err(e) = result {
                    fatal.lock().unwrap().get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }

    let metrics = evaluate_run(&opts.dir, &pipeline.scheme, None)?;
    let metrics_path = opts.dir.join("metrics.json");
    write_atomic(&metrics_path, &(metrics.to_json() + "\n"))?;
    Ok(RunSummary {
        executed: pending.len(),
        skipped,
        failed: failed.into_inner(),
        metrics,
    })
}

/// Base scorers for the weighted summary and question metrics.
pub struct Scorers<'a> {
    pub alignscore: &'a dyn ExternalScorer,
    pub rquge: &'a dyn ExternalScorer,
}

pub fn read_run_info(dir: &Path) -> Result<RunInfo, PipelineError> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path, source })
}

/// Scores every record listed in the manifest. Cases without a verdict or
/// without a gold label are counted as excluded.
pub fn evaluate_run(dir: &Path, scheme: &LabelScheme, scorers: Option<&Scorers<'_>>) -> Result<MetricsReport, PipelineError> {
    let info = read_run_info(dir)?;
    let mut pairs = Vec::new();
    let mut excluded = 0;
    let mut claim_scores = Vec::new();
    for id in read_manifest(dir)? {
        let Some(record) = read_record(dir, &id)? else {
            excluded += 1;
            continue;
        };
        let (Some(verdict), Some(gold), Status::Done) = (&record.verdict, &record.gold_label, record.status) else {
            excluded += 1;
            claim_scores.push(None);
            continue;
        };
        pairs.push((gold.clone(), verdict.label.clone()));
        if let Some(s) = scorers {
            claim_scores.push(score_record(&record, verdict, gold, scheme, s)?);
        }
    }
    let classification = if pairs.is_empty() {
        None
    } else {
        let mut report = prf(&pairs, scheme)?;
        report.excluded = excluded;
        Some(report)
    };
    Ok(MetricsReport {
        dataset: info.dataset,
        scheme: scheme.name().to_string(),
        mode: info.config.mode.to_string(),
        classification,
        scores: scorers.map(|_| aggregate_corpus(&claim_scores)),
    })
}

fn score_record(
    record: &PipelineRecord,
    verdict: &Verdict,
    gold: &str,
    scheme: &LabelScheme,
    scorers: &Scorers<'_>,
) -> Result<Option<ClaimScores>, PipelineError> {
    let (Some(summary), Some(pairs)) = (&record.summary, &record.qa_pairs) else {
        return Ok(None);
    };
    let answered: Vec<&QAPair> = pairs.iter().filter(|p| p.is_answered()).collect();
    if answered.is_empty() {
        return Ok(None);
    }
    let w = distance_weight(&verdict.label, gold, scheme)?;
    let one = crate::metrics::DistanceWeight::new(1.0)?;
    let align: ExternalScore = scorers.alignscore.score(&summary.text, &record.claim, None)?;
    let range = scorers.alignscore.range();
    let rquge: Vec<ExternalScore> = answered
        .iter()
        .map(|p| scorers.rquge.score(&p.question, &record.claim, p.answer.as_deref()))
        .collect::<Result<_, _>>()?;
    let rrange = scorers.rquge.range();
    Ok(Some(ClaimScores {
        alignscore: weighted_alignscore_in(&align, one, range)?,
        alignscore_weighted: weighted_alignscore_in(&align, w, range)?,
        rquge: weighted_rquge_in(&rquge, one, rrange)?,
        rquge_weighted: weighted_rquge_in(&rquge, w, rrange)?,
    }))
}
