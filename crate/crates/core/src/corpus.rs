//! Claim-case ingestion for LIAR-RAW / RAWFC style datasets.
//!
//! Accepted layouts for a dataset path:
//!
//! * a directory with one JSON array per split (`train.json`, `val.json` or
//!   `dev.json`, `test.json`, or the same names with `.jsonl`);
//! * a directory with one sub-directory per split holding one JSON object
//!   per claim (the RAWFC distribution);
//! * a single JSON/JSONL file, whose split is taken from its file stem.
//!
//! Each record is `{event_id, claim, label, reports: [...]}` where a report
//! is a string, `{sentences: [..]}`, `{content | report_text | text: ".."}`
//! or `{tokenized: [{sent, is_evidence}]}`. Malformed records are skipped and
//! reported as [`Diagnostic`]s.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::text::split_sentences;
use crate::verification::{map_binary, LabelDef, LabelScheme};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} is not valid JSON: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("no split files found under {0}")]
    NoData(PathBuf),
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn aliases(&self) -> &'static [&'static str] {
        match self {
            Split::Train => &["train"],
            Split::Val => &["val", "dev", "valid", "validation"],
            Split::Test => &["test"],
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Split::ALL
            .into_iter()
            .find(|sp| sp.aliases().contains(&lower.as_str()))
            .ok_or_else(|| CorpusError::UnknownSplit(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub index: usize,
    pub sentences: Vec<String>,
}

impl Report {
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimCase {
    pub id: String,
    pub claim: String,
    pub reports: Vec<Report>,
    pub gold_label: Option<String>,
    /// (report index, sentence index) pairs marked as evidence.
    pub evidence: Option<BTreeSet<(usize, usize)>>,
    pub split: Split,
}

impl ClaimCase {
    /// Minimal constructor for programmatic use: each report string is
    /// sentence-split.
    pub fn new(id: impl Into<String>, claim: impl Into<String>, reports: &[&str]) -> Self {
        Self {
            id: id.into(),
            claim: claim.into(),
            reports: reports
                .iter()
                .map(|r| split_sentences(r))
                .filter(|s| !s.is_empty())
                .enumerate()
                .map(|(index, sentences)| Report { index, sentences })
                .collect(),
            gold_label: None,
            evidence: None,
            split: Split::Test,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.gold_label = Some(label.into());
        self
    }

    pub fn report_texts(&self) -> Vec<String> {
        self.reports.iter().map(Report::text).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub source: PathBuf,
    pub record: usize,
    pub id: Option<String>,
    pub message: String,
    /// Whether the whole record was dropped (as opposed to a repaired part).
    pub skipped: bool,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.source.display(), self.record)?;
        if let Some(id) = &self.id {
            write!(f, " ({id})")?;
        }
        write!(f, ": {}", self.message)?;
        if self.skipped {
            f.write_str(" [skipped]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct LoadedDataset {
    pub cases: Vec<ClaimCase>,
    pub diagnostics: Vec<Diagnostic>,
}

impl LoadedDataset {
    pub fn skipped(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.skipped).count()
    }
}

/// Loads every split present under `path` (restricted to `splits` when
/// given), validating gold labels against `scheme`.
pub fn load_dataset(path: &Path, scheme: &LabelScheme, splits: Option<&[Split]>) -> Result<LoadedDataset, CorpusError> {
    let sources = discover(path)?;
    let mut out = LoadedDataset::default();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (split, source) in sources {
        if splits.is_some_and(|s| !s.contains(&split)) {
            continue;
        }
        for (origin, record_no, value) in read_records(&source)? {
            match parse_record(&value, split, scheme) {
                Ok((case, notes)) => {
                    for message in notes {
                        out.diagnostics.push(Diagnostic {
                            source: origin.clone(),
                            record: record_no,
                            id: Some(case.id.clone()),
                            message,
                            skipped: false,
                        });
                    }
                    if !seen_ids.insert(case.id.clone()) {
                        out.diagnostics.push(Diagnostic {
                            source: origin.clone(),
                            record: record_no,
                            id: Some(case.id.clone()),
                            message: "duplicate case id".into(),
                            skipped: true,
                        });
                        continue;
                    }
                    out.cases.push(case);
                }
                Err((id, message)) => out.diagnostics.push(Diagnostic {
                    source: origin,
                    record: record_no,
                    id,
                    message,
                    skipped: true,
                }),
            }
        }
    }
    Ok(out)
}

enum Source {
    File(PathBuf),
    Dir(PathBuf),
}

fn discover(path: &Path) -> Result<Vec<(Split, Source)>, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let meta = fs::metadata(path).map_err(io_err)?;
    if meta.is_file() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let split = stem.parse().unwrap_or(Split::Test);
        return Ok(vec![(split, Source::File(path.to_path_buf()))]);
    }
    let mut found = Vec::new();
    for split in Split::ALL {
        let hit = split.aliases().iter().find_map(|name| {
            ["json", "jsonl"]
                .iter()
                .map(|ext| path.join(format!("{name}.{ext}")))
                .find(|p| p.is_file())
                .map(Source::File)
                .or_else(|| {
                    let d = path.join(name);
                    d.is_dir().then_some(Source::Dir(d))
                })
        });
        if let Some(source) = hit {
            found.push((split, source));
        }
    }
    if found.is_empty() {
        return Err(CorpusError::NoData(path.to_path_buf()));
    }
    Ok(found)
}

fn read_json(path: &Path) -> Result<Vec<Value>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |e: serde_json::Error| CorpusError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if path.extension().is_some_and(|e| e == "jsonl") {
        return text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(parse_err))
            .collect();
    }
    match serde_json::from_str(&text).map_err(parse_err)? {
        Value::Array(items) => Ok(items),
        other => Ok(vec![other]),
    }
}

fn read_records(source: &Source) -> Result<Vec<(PathBuf, usize, Value)>, CorpusError> {
    match source {
        Source::File(p) => Ok(read_json(p)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| (p.clone(), i, v))
            .collect()),
        Source::Dir(d) => {
            let mut files: Vec<PathBuf> = fs::read_dir(d)
                .map_err(|source| CorpusError::Io {
                    path: d.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            files.sort();
            let mut out = Vec::new();
            for f in files {
                for (i, v) in read_json(&f)?.into_iter().enumerate() {
                    out.push((f.clone(), i, v));
                }
            }
            Ok(out)
        }
    }
}

type RecordError = (Option<String>, String);

/// Six-way labels collapse onto the binary scheme when loading with it.
fn binary_fallback<'a>(label: &str, scheme: &'a LabelScheme) -> Option<&'a LabelDef> {
    if scheme.name() != LabelScheme::liar_raw_binary().name() {
        return None;
    }
    map_binary(label).ok().and_then(|b| scheme.get(b))
}

fn parse_record(v: &Value, split: Split, scheme: &LabelScheme) -> Result<(ClaimCase, Vec<String>), RecordError> {
    let obj = v.as_object().ok_or((None, "record is not an object".to_string()))?;
    let id = ["event_id", "id"]
        .iter()
        .find_map(|k| match obj.get(*k) {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(Value::Number(n)) => Some(n.to_string()),
            _ => None,
        })
        .ok_or((None, "missing event_id".to_string()))?;
    let fail = |m: String| (Some(id.clone()), m);

    let claim = obj
        .get("claim")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| fail("missing or empty claim".into()))?
        .to_string();

    let gold_label = match obj.get("label").or_else(|| obj.get("gold_label")) {
        None | Some(Value::Null) => None,
        Some(Value::String(l)) => {
            let def = scheme
                .get(l)
                .or_else(|| binary_fallback(l, scheme))
                .ok_or_else(|| fail(format!("label {l:?} not in scheme {}", scheme.name())))?;
            Some(def.label.clone())
        }
        Some(other) => return Err(fail(format!("label has unexpected type: {other}"))),
    };

    let mut notes = Vec::new();
    let mut reports = Vec::new();
    let mut evidence: Option<BTreeSet<(usize, usize)>> = None;
    let raw_reports = match obj.get("reports") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items.clone(),
        Some(_) => return Err(fail("reports is not an array".into())),
    };
    let mut dropped = 0;
    for raw in &raw_reports {
        let parsed = parse_report(raw).map_err(&fail)?;
        if parsed.sentences.is_empty() {
            dropped += 1;
            continue;
        }
        let index = reports.len();
        if let Some(flags) = parsed.evidence {
            let set = evidence.get_or_insert_with(BTreeSet::new);
            set.extend(flags.into_iter().map(|j| (index, j)));
        }
        reports.push(Report {
            index,
            sentences: parsed.sentences,
        });
    }
    if dropped > 0 {
        notes.push(format!("dropped {dropped} empty report(s)"));
    }
    if let Some(explicit) = obj.get("evidence").filter(|e| !e.is_null()) {
        let pairs: Vec<(usize, usize)> =
            serde_json::from_value(explicit.clone()).map_err(|e| fail(format!("bad evidence field: {e}")))?;
        let set = evidence.get_or_insert_with(BTreeSet::new);
        for (i, j) in pairs {
            if reports.get(i).is_none_or(|r| j >= r.sentences.len()) {
                return Err(fail(format!("evidence ({i}, {j}) does not resolve")));
            }
            set.insert((i, j));
        }
    }

    Ok((
        ClaimCase {
            id,
            claim,
            reports,
            gold_label,
            evidence,
            split,
        },
        notes,
    ))
}

struct ParsedReport {
    sentences: Vec<String>,
    evidence: Option<Vec<usize>>,
}

fn parse_report(raw: &Value) -> Result<ParsedReport, String> {
    let from_text = |s: &str| ParsedReport {
        sentences: split_sentences(s),
        evidence: None,
    };
    match raw {
        Value::String(s) => Ok(from_text(s)),
        Value::Object(o) => {
            if let Some(Value::Array(sents)) = o.get("sentences") {
                let sentences = sents
                    .iter()
                    .map(|s| s.as_str().map(|x| x.trim().to_string()).ok_or("non-string sentence"))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .filter(|s| !s.is_empty())
                    .collect();
                return Ok(ParsedReport {
                    sentences,
                    evidence: None,
                });
            }
            if let Some(Value::Array(toks)) = o.get("tokenized") {
                let mut sentences = Vec::new();
                let mut flags = Vec::new();
                for t in toks {
                    let Some(sent) = t.get("sent").and_then(Value::as_str).map(str::trim) else {
                        return Err("tokenized entry without sent".into());
                    };
                    if sent.is_empty() {
                        continue;
                    }
                    let is_ev = match t.get("is_evidence") {
                        Some(Value::Bool(b)) => *b,
                        Some(Value::Number(n)) => n.as_i64() == Some(1),
                        _ => false,
                    };
                    if is_ev {
                        flags.push(sentences.len());
                    }
                    sentences.push(sent.to_string());
                }
                if !sentences.is_empty() {
                    return Ok(ParsedReport {
                        sentences,
                        evidence: Some(flags),
                    });
                }
            }
            for key in ["report_text", "content", "text"] {
                if let Some(s) = o.get(key).and_then(Value::as_str) {
                    return Ok(from_text(s));
                }
            }
            Ok(ParsedReport {
                sentences: Vec::new(),
                evidence: None,
            })
        }
        _ => Err("report is neither a string nor an object".into()),
    }
}

fn canonical_record(case: &ClaimCase) -> Value {
    let mut v = json!({
        "event_id": case.id,
        "claim": case.claim,
        "label": case.gold_label,
        "reports": case.reports.iter().map(|r| json!({"sentences": r.sentences})).collect::<Vec<_>>(),
    });
    if let Some(ev) = &case.evidence {
        v["evidence"] = json!(ev.iter().collect::<Vec<_>>());
    }
    v
}

/// Writes cases in the canonical schema, one `<split>.json` per split.
pub fn write_canonical(dir: &Path, cases: &[ClaimCase]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for split in Split::ALL {
        let records: Vec<Value> = cases.iter().filter(|c| c.split == split).map(canonical_record).collect();
        if records.is_empty() {
            continue;
        }
        let text = serde_json::to_string_pretty(&records)?;
        fs::write(dir.join(format!("{split}.json")), text)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total_claims: usize,
    pub total_reports: usize,
    pub label_counts: BTreeMap<String, usize>,
    pub unlabeled: usize,
    pub split_counts: BTreeMap<Split, usize>,
    /// Mean reports per claim; absent for an empty corpus.
    pub avg_reports: Option<f64>,
}

impl DatasetStats {
    /// Mean reports per claim rounded to one decimal.
    pub fn avg_reports_rounded(&self) -> Option<f64> {
        self.avg_reports.map(|a| (a * 10.0).round() / 10.0)
    }
}

pub fn dataset_stats(cases: &[ClaimCase]) -> DatasetStats {
    let mut label_counts = BTreeMap::new();
    let mut split_counts = BTreeMap::new();
    let mut unlabeled = 0;
    let mut total_reports = 0;
    for c in cases {
        total_reports += c.reports.len();
        *split_counts.entry(c.split).or_insert(0) += 1;
        match &c.gold_label {
            Some(l) => *label_counts.entry(l.clone()).or_insert(0) += 1,
            None => unlabeled += 1,
        }
    }
    DatasetStats {
        total_claims: cases.len(),
        total_reports,
        label_counts,
        unlabeled,
        split_counts,
        avg_reports: (!cases.is_empty()).then(|| total_reports as f64 / cases.len() as f64),
    }
}
