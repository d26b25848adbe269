//! Classification metrics and distance-weighted summary/question scores.
//!
//! Precision, recall and F1 are macro-averaged over the labels that occur in
//! either the gold or the predicted column. A zero denominator yields 0.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::sha256_hex;
use crate::verification::LabelScheme;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    Empty,
    #[error("label {label:?} is not in scheme {scheme}")]
    UnknownLabel { label: String, scheme: String },
    #[error("{scorer} score {value} outside [{min}, {max}]")]
    OutOfRange { scorer: String, value: f64, min: f64, max: f64 },
    #[error("no per-question scores")]
    NoScores,
    #[error("weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("no precomputed score for this input")]
    MissingScore,
    #[error("cannot read scores: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed score file: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
}

/// Per-label counts over the evaluated cases, in scheme order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub labels: Vec<String>,
    pub counts: Vec<Counts>,
    pub evaluated: usize,
    pub correct: usize,
    pub excluded: usize,
}

impl ConfusionTable {
    /// Builds the table from `(gold, predicted)` pairs. Labels are
    /// canonicalized through the scheme.
    pub fn from_pairs<G, P>(pairs: &[(G, P)], scheme: &LabelScheme) -> Result<Self, MetricsError>
    where
        G: AsRef<str>,
        P: AsRef<str>,
    {
        let labels: Vec<String> = scheme.labels().iter().map(|d| d.label.clone()).collect();
        let mut counts = vec![Counts::default(); labels.len()];
        let mut seen = vec![false; labels.len()];
        let mut correct = 0;
        let index = |label: &str| -> Result<usize, MetricsError> {
            scheme
                .get(label)
                .map(|d| d.value as usize - 1)
                .ok_or_else(|| MetricsError::UnknownLabel {
                    label: label.to_string(),
                    scheme: scheme.name().to_string(),
                })
        };
        for (gold, pred) in pairs {
            let g = index(gold.as_ref())?;
            let p = index(pred.as_ref())?;
            seen[g] = true;
            seen[p] = true;
            counts[g].support += 1;
            if g == p {
                counts[g].tp += 1;
                correct += 1;
            } else {
                counts[p].fp += 1;
                counts[g].fn_ += 1;
            }
        }
        // Labels absent from both columns are dropped so they do not dilute
        // the macro average.
        let (labels, counts) = labels
            .into_iter()
            .zip(counts)
            .zip(seen)
            .filter(|(_, s)| *s)
            .map(|(lc, _)| lc)
            .unzip();
        Ok(Self {
            labels,
            counts,
            evaluated: pairs.len(),
            correct,
            excluded: 0,
        })
    }

    pub fn with_excluded(mut self, excluded: usize) -> Self {
        self.excluded = excluded;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub per_label: Vec<LabelMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Mean recall over labels that occur in the gold column.
    pub balanced_accuracy: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn report_from_table(table: &ConfusionTable) -> Result<ClassificationReport, MetricsError> {
    if table.evaluated == 0 {
        return Err(MetricsError::Empty);
    }
    let per_label: Vec<LabelMetrics> = table
        .labels
        .iter()
        .zip(&table.counts)
        .map(|(label, c)| {
            let precision = ratio(c.tp, c.tp + c.fp);
            let recall = ratio(c.tp, c.tp + c.fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            LabelMetrics {
                label: label.clone(),
                precision,
                recall,
                f1,
                support: c.support,
            }
        })
        .collect();
    Ok(ClassificationReport {
        macro_precision: mean(per_label.iter().map(|m| m.precision)),
        macro_recall: mean(per_label.iter().map(|m| m.recall)),
        macro_f1: mean(per_label.iter().map(|m| m.f1)),
        accuracy: ratio(table.correct, table.evaluated),
        balanced_accuracy: mean(per_label.iter().filter(|m| m.support > 0).map(|m| m.recall)),
        per_label,
        evaluated: table.evaluated,
        excluded: table.excluded,
    })
}

/// Per-label and macro precision, recall and F1 for `(gold, predicted)` pairs.
pub fn prf<G, P>(pairs: &[(G, P)], scheme: &LabelScheme) -> Result<ClassificationReport, MetricsError>
where
    G: AsRef<str>,
    P: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    report_from_table(&ConfusionTable::from_pairs(pairs, scheme)?)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistanceWeight(f64);

impl DistanceWeight {
    pub fn new(w: f64) -> Result<Self, MetricsError> {
        if (0.0..=1.0).contains(&w) {
            Ok(Self(w))
        } else {
            Err(MetricsError::BadWeight(w))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `1 - (v - y)^2 / (y_max - y_min)^2` over the scheme's integer values.
pub fn distance_weight(predicted: &str, gold: &str, scheme: &LabelScheme) -> Result<DistanceWeight, MetricsError> {
    let value = |label: &str| {
        scheme.value_of(label).ok_or_else(|| MetricsError::UnknownLabel {
            label: label.to_string(),
            scheme: scheme.name().to_string(),
        })
    };
    let v = f64::from(value(predicted)?);
    let y = f64::from(value(gold)?);
    let span = f64::from(scheme.y_max() - scheme.y_min());
    Ok(DistanceWeight(1.0 - (v - y).powi(2) / span.powi(2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

pub const ALIGNSCORE_RANGE: ScoreRange = ScoreRange { min: 0.0, max: 1.0 };
pub const RQUGE_RANGE: ScoreRange = ScoreRange { min: 1.0, max: 5.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScore {
    pub value: f64,
    pub scorer: String,
}

impl ExternalScore {
    pub fn new(value: f64, scorer: impl Into<String>) -> Self {
        Self {
            value,
            scorer: scorer.into(),
        }
    }

    pub fn check(&self, range: ScoreRange) -> Result<f64, MetricsError> {
        if self.value.is_finite() && self.value >= range.min && self.value <= range.max {
            Ok(self.value)
        } else {
            Err(MetricsError::OutOfRange {
                scorer: self.scorer.clone(),
                value: self.value,
                min: range.min,
                max: range.max,
            })
        }
    }
}

pub fn weighted_alignscore(base: &ExternalScore, weight: DistanceWeight) -> Result<f64, MetricsError> {
    weighted_alignscore_in(base, weight, ALIGNSCORE_RANGE)
}

pub fn weighted_alignscore_in(base: &ExternalScore, weight: DistanceWeight, range: ScoreRange) -> Result<f64, MetricsError> {
    Ok(weight.0 * base.check(range)?)
}

pub fn weighted_rquge(scores: &[ExternalScore], weight: DistanceWeight) -> Result<f64, MetricsError> {
    weighted_rquge_in(scores, weight, RQUGE_RANGE)
}

/// Weight times the mean per-question score.
pub fn weighted_rquge_in(scores: &[ExternalScore], weight: DistanceWeight, range: ScoreRange) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::NoScores);
    }
    let values = scores.iter().map(|s| s.check(range)).collect::<Result<Vec<_>, _>>()?;
    Ok(weight.0 * mean(values))
}

/// Macro and weighted scores of one claim.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaimScores {
    pub alignscore: f64,
    pub alignscore_weighted: f64,
    pub rquge: f64,
    pub rquge_weighted: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub alignscore_macro: Option<f64>,
    pub alignscore_weighted: Option<f64>,
    pub rquge_macro: Option<f64>,
    pub rquge_weighted: Option<f64>,
    pub evaluated: usize,
    pub excluded: usize,
}

/// Means over the claims that have scores; `None` entries are counted as
/// excluded.
pub fn aggregate_corpus(claims: &[Option<ClaimScores>]) -> CorpusScores {
    let ok: Vec<&ClaimScores> = claims.iter().flatten().collect();
    let avg = |f: fn(&ClaimScores) -> f64| (!ok.is_empty()).then(|| mean(ok.iter().map(|c| f(c))));
    CorpusScores {
        alignscore_macro: avg(|c| c.alignscore),
        alignscore_weighted: avg(|c| c.alignscore_weighted),
        rquge_macro: avg(|c| c.rquge),
        rquge_weighted: avg(|c| c.rquge_weighted),
        evaluated: ok.len(),
        excluded: claims.len() - ok.len(),
    }
}

/// Source of base summary/question scores.
pub trait ExternalScorer: Send + Sync {
    fn id(&self) -> &str;
    fn range(&self) -> ScoreRange;
    fn score(&self, text_a: &str, text_b: &str, answer: Option<&str>) -> Result<ExternalScore, MetricsError>;
}

fn tokens(s: &str) -> std::collections::HashSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Deterministic offline stand-in: share of `text_b` tokens (plus answer
/// tokens, when given) found in `text_a`, mapped linearly onto `range`.
/// It is not a reimplementation of any published scorer.
#[derive(Debug, Clone)]
pub struct TokenOverlapScorer {
    id: String,
    range: ScoreRange,
}

impl TokenOverlapScorer {
    pub fn new(id: impl Into<String>, range: ScoreRange) -> Self {
        Self { id: id.into(), range }
    }

    pub fn alignscore_stub() -> Self {
        Self::new("token-overlap-stub/align", ALIGNSCORE_RANGE)
    }

    pub fn rquge_stub() -> Self {
        Self::new("token-overlap-stub/rquge", RQUGE_RANGE)
    }
}

impl ExternalScorer for TokenOverlapScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn range(&self) -> ScoreRange {
        self.range
    }

    fn score(&self, text_a: &str, text_b: &str, answer: Option<&str>) -> Result<ExternalScore, MetricsError> {
        let a = tokens(text_a);
        let mut b = tokens(text_b);
        if let Some(ans) = answer {
            b.extend(tokens(ans));
        }
        let overlap = ratio(b.iter().filter(|t| a.contains(*t)).count(), b.len());
        let value = self.range.min + overlap * (self.range.max - self.range.min);
        Ok(ExternalScore::new(value, self.id.clone()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScoreLine {
    text_a: String,
    text_b: String,
    #[serde(default)]
    answer: Option<String>,
    score: f64,
}

fn score_key(a: &str, b: &str, answer: Option<&str>) -> String {
    sha256_hex(serde_json::to_vec(&(a, b, answer)).expect("tuple encodes"))
}

/// Scores precomputed by an external tool, one JSON object per line with
/// `text_a`, `text_b`, optional `answer` and `score`.
#[derive(Debug, Clone)]
pub struct FileScorer {
    id: String,
    range: ScoreRange,
    scores: HashMap<String, f64>,
}

impl FileScorer {
    pub fn from_jsonl(path: impl AsRef<Path>, id: impl Into<String>, range: ScoreRange) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path)?;
        let mut scores = HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let s: ScoreLine = serde_json::from_str(line)?;
            scores.insert(score_key(&s.text_a, &s.text_b, s.answer.as_deref()), s.score);
        }
        Ok(Self {
            id: id.into(),
            range,
            scores,
        })
    }
}

impl ExternalScorer for FileScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn range(&self) -> ScoreRange {
        self.range
    }

    fn score(&self, text_a: &str, text_b: &str, answer: Option<&str>) -> Result<ExternalScore, MetricsError> {
        let v = self
            .scores
            .get(&score_key(text_a, text_b, answer))
            .ok_or(MetricsError::MissingScore)?;
        let s = ExternalScore::new(*v, self.id.clone());
        s.check(self.range)?;
        Ok(s)
    }
}

/// Everything `eval` writes for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub scheme: String,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<CorpusScores>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report encodes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        match &self.classification {
            Some(c) => {
                out.push_str(&format!(
                    "| Dataset | Mode | Pr | Re | F1 |\n|---|---|---|---|---|\n| {} | {} | {} | {} | {} |\n",
                    self.dataset,
                    self.mode,
                    pct(c.macro_precision),
                    pct(c.macro_recall),
                    pct(c.macro_f1)
                ));
                out.push_str(&format!(
                    "\nAccuracy {}, balanced accuracy {}, evaluated {}, excluded {}\n",
                    pct(c.accuracy),
                    pct(c.balanced_accuracy),
                    c.evaluated,
                    c.excluded
                ));
                out.push_str("\n| Label | Pr | Re | F1 | Support |\n|---|---|---|---|---|\n");
                for m in &c.per_label {
                    out.push_str(&format!(
                        "| {} | {} | {} | {} | {} |\n",
                        m.label,
                        pct(m.precision),
                        pct(m.recall),
                        pct(m.f1),
                        m.support
                    ));
                }
            }
            None => out.push_str(&format!("{} ({}): no gold-labeled verdicts to score\n", self.dataset, self.mode)),
        }
        if let Some(s) = &self.scores {
            let cell = |x: Option<f64>| x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            out.push_str("\n| AlignScore-M | AlignScore-W | RQUGE-M | RQUGE-W |\n|---|---|---|---|\n");
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                cell(s.alignscore_macro),
                cell(s.alignscore_weighted),
                cell(s.rquge_macro),
                cell(s.rquge_weighted)
            ));
        }
        out
    }
}
