//! Answering ranked questions from the reports and condensing the answers
//! into one summary paragraph.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, StageModel};
use crate::prompts::render;
use crate::text::{sha256_hex, truncate_at_boundary, word_count};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ReasoningError {
    #[error("no question was answered successfully, summary unavailable")]
    SummaryUnavailable,
    #[error("summary call returned empty text")]
    EmptySummary,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One answered (or failed) question. `rank` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub rank: usize,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    pub retries: u32,
}

impl QAPair {
    pub fn is_answered(&self) -> bool {
        self.answer.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveSummary {
    pub text: String,
    pub word_count: usize,
}

impl ContrastiveSummary {
    /// Trims the text and folds blank-line paragraph breaks into spaces.
    pub fn new(text: &str) -> Self {
        let mut paragraphs: Vec<Vec<&str>> = vec![Vec::new()];
        for line in text.lines().map(str::trim) {
            if line.is_empty() {
                if !paragraphs.last().unwrap().is_empty() {
                    paragraphs.push(Vec::new());
                }
            } else {
                paragraphs.last_mut().unwrap().push(line);
            }
        }
        let text = paragraphs
            .iter()
            .filter(|p| !p.is_empty())
            .map(|p| p.join("\n"))
            .collect::<Vec<_>>()
            .join(" ");
        Self {
            word_count: word_count(&text),
            text,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReasoningOptions<'a> {
    pub stage: &'a StageModel,
    pub template: &'a str,
    /// Maximum bytes of report context per answer prompt.
    pub context_budget: usize,
    pub concurrency: usize,
}

/// Joins reports in order under `--- Report i ---` headers (1-based) and
/// cuts the tail to fit `budget` bytes.
pub fn assemble_context(reports: &[String], budget: usize) -> String {
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("--- Report {} ---\n{}", i + 1, r.trim()));
    }
    if out.len() > budget {
        out.truncate(truncate_at_boundary(&out, budget).len());
    }
    out
}

pub fn render_answer_prompt(template: &str, context: &str, claim: &str, question: &str) -> String {
    render(
        template,
        &[("context", context), ("claim", claim), ("contrastive question", question)],
    )
}

/// Answers each question with its own call. Failures are recorded on the
/// pair instead of aborting the batch.
pub fn answer_questions(
    questions: &[String],
    reports: &[String],
    claim: &str,
    gateway: &Gateway,
    opts: &ReasoningOptions<'_>,
) -> Vec<QAPair> {
    let context = assemble_context(reports, opts.context_budget);
    let answer_one = |rank: usize, question: &str| -> QAPair {
        let prompt = render_answer_prompt(opts.template, &context, claim, question);
        let prompt_hash = sha256_hex(prompt.as_bytes());
        let mut pair = QAPair {
            rank,
            question: question.to_string(),
            answer: None,
            error: None,
            prompt_hash,
            raw_output: None,
            retries: 0,
        };
        match gateway.complete(&opts.stage.request(prompt)) {
            Ok(c) => {
                pair.retries = c.retries;
                let answer = c.text.trim().to_string();
                if answer.is_empty() {
                    pair.error = Some("empty answer".into());
                } else {
                    pair.answer = Some(answer);
                }
                pair.raw_output = Some(c.text);
            }
            Err(e) => {
                if let GatewayError::Transport { attempts, .. } = &e {
                    pair.retries = attempts.saturating_sub(1);
                }
                pair.error = Some(e.to_string());
            }
        }
        pair
    };

    let mut out = Vec::with_capacity(questions.len());
    let indexed: Vec<(usize, &String)> = questions.iter().enumerate().collect();
    for chunk in indexed.chunks(opts.concurrency.max(1)) {
        let done: Vec<QAPair> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(i, q)| {
                    let answer_one = &answer_one;
                    s.spawn(move || answer_one(i + 1, q))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("answer worker panicked")).collect()
        });
        out.extend(done);
    }
    out
}

/// `* Question i: ...` / `* Answer i: ...` blocks for the answered pairs,
/// numbered consecutively in rank order.
pub fn render_qa_block(pairs: &[QAPair]) -> String {
    pairs
        .iter()
        .filter_map(|p| p.answer.as_ref().map(|a| (&p.question, a)))
        .enumerate()
        .map(|(i, (q, a))| format!("* Question {n}: {q}\n* Answer {n}: {a}", n = i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_summary_prompt(template: &str, claim: &str, pairs: &[QAPair]) -> String {
    render(template, &[("qa pairs", &render_qa_block(pairs)), ("claim", claim)])
}

#[derive(Debug, Clone)]
pub struct SummaryOutput {
    pub summary: ContrastiveSummary,
    pub raw: String,
    pub prompt_hash: String,
    pub retries: u32,
}

pub fn summarise(
    claim: &str,
    pairs: &[QAPair],
    gateway: &Gateway,
    stage: &StageModel,
    template: &str,
) -> Result<SummaryOutput, ReasoningError> {
    if !pairs.iter().any(QAPair::is_answered) {
        return Err(ReasoningError::SummaryUnavailable);
    }
    let prompt = render_summary_prompt(template, claim, pairs);
    let prompt_hash = sha256_hex(prompt.as_bytes());
    let c = gateway.complete(&stage.request(prompt))?;
    let summary = ContrastiveSummary::new(&c.text);
    if summary.text.is_empty() {
        return Err(ReasoningError::EmptySummary);
    }
    Ok(SummaryOutput {
        summary,
        raw: c.text,
        prompt_hash,
        retries: c.retries,
    })
}
