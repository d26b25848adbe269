//! Veracity classification against an ordered label scheme.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, StageModel};
use crate::prompts::render;
use crate::reasoning::ContrastiveSummary;
use crate::text::normalize_label;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("label scheme needs a name")]
    MissingName,
    #[error("label scheme needs at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("label values must run 1..=n in order; label {label:?} has {value}, expected {expected}")]
    BadValue { label: String, value: u32, expected: u32 },
    #[error("duplicate label {0:?}")]
    DuplicateLabel(String),
    #[error("empty label")]
    EmptyLabel,
    #[error("unknown scheme {0:?}")]
    UnknownScheme(String),
    #[error("cannot read scheme: {0}")]
    Io(#[from] io::Error),
    #[error("malformed scheme: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerificationError {
    #[error("could not map model output to exactly one label: {raw:?}")]
    UnparseableVerdict { raw: String },
    #[error("label {label:?} is not in scheme {scheme}")]
    UnknownLabel { label: String, scheme: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    pub label: String,
    pub value: u32,
    pub description: String,
}

/// Ordered label set with integer values `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelScheme {
    name: String,
    labels: Vec<LabelDef>,
    #[serde(skip)]
    normalized: Vec<String>,
}

impl LabelScheme {
    pub fn new(name: impl Into<String>, labels: Vec<LabelDef>) -> Result<Self, SchemeError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(SchemeError::MissingName);
        }
        if labels.len() < 2 {
            return Err(SchemeError::TooFewLabels(labels.len()));
        }
        let mut normalized: Vec<String> = Vec::with_capacity(labels.len());
        for (i, def) in labels.iter().enumerate() {
            let expected = i as u32 + 1;
            if def.value != expected {
                return Err(SchemeError::BadValue {
                    label: def.label.clone(),
                    value: def.value,
                    expected,
                });
            }
            let n = normalize_label(&def.label);
            if n.is_empty() {
                return Err(SchemeError::EmptyLabel);
            }
            if normalized.contains(&n) {
                return Err(SchemeError::DuplicateLabel(def.label.clone()));
            }
            normalized.push(n);
        }
        Ok(Self {
            name,
            labels,
            normalized,
        })
    }

    pub fn liar_raw() -> Self {
        Self::from_json(include_str!("../schemes/liar-raw.json")).expect("built-in scheme is valid")
    }

    pub fn rawfc() -> Self {
        Self::from_json(include_str!("../schemes/rawfc.json")).expect("built-in scheme is valid")
    }

    pub fn liar_raw_binary() -> Self {
        Self::from_json(include_str!("../schemes/liar-raw-binary.json")).expect("built-in scheme is valid")
    }

    /// Built-in scheme by name, or a scheme file when `name` is a path.
    pub fn resolve(name: &str) -> Result<Self, SchemeError> {
        match name.to_ascii_lowercase().as_str() {
            "liar-raw" | "liar" => Ok(Self::liar_raw()),
            "rawfc" => Ok(Self::rawfc()),
            "liar-raw-binary" | "liar-binary" => Ok(Self::liar_raw_binary()),
            _ if Path::new(name).is_file() => Self::from_file(name),
            _ => Err(SchemeError::UnknownScheme(name.to_string())),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SchemeError> {
        #[derive(Deserialize)]
        struct Doc {
            name: String,
            labels: Vec<LabelDef>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        Self::new(doc.name, doc.labels)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SchemeError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[LabelDef] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn y_min(&self) -> u32 {
        1
    }

    pub fn y_max(&self) -> u32 {
        self.labels.len() as u32
    }

    fn position(&self, label: &str) -> Option<usize> {
        let n = normalize_label(label);
        self.normalized.iter().position(|x| *x == n)
    }

    /// Looks up a label after normalization.
    pub fn get(&self, label: &str) -> Option<&LabelDef> {
        self.position(label).map(|i| &self.labels[i])
    }

    pub fn value_of(&self, label: &str) -> Option<u32> {
        self.get(label).map(|d| d.value)
    }

    pub fn require(&self, label: &str) -> Result<&LabelDef, VerificationError> {
        self.get(label).ok_or_else(|| VerificationError::UnknownLabel {
            label: label.to_string(),
            scheme: self.name.clone(),
        })
    }

    /// `label: description` lines joined for the verification prompt.
    pub fn render_for_prompt(&self) -> String {
        self.labels
            .iter()
            .map(|d| format!("{}: {}", d.label, d.description))
            .collect::<Vec<_>>()
            .join("\n- ")
    }

    /// Maps free text onto one label: exact match of the normalized text,
    /// otherwise a unique whole-token occurrence of a label inside it.
    pub fn match_output(&self, raw: &str) -> LabelMatch {
        let norm = normalize_label(raw);
        if let Some(i) = self.normalized.iter().position(|l| *l == norm) {
            return LabelMatch::Unique(i);
        }
        let tokens: Vec<&str> = norm.split(' ').filter(|t| !t.is_empty()).collect();
        let hits: Vec<usize> = self
            .normalized
            .iter()
            .enumerate()
            .filter(|(_, label)| {
                let lt: Vec<&str> = label.split(' ').collect();
                tokens.windows(lt.len()).any(|w| w == lt.as_slice())
            })
            .map(|(i, _)| i)
            .collect();
        match hits.len() {
            0 => LabelMatch::NoMatch,
            1 => LabelMatch::Unique(hits[0]),
            _ => LabelMatch::Ambiguous(hits),
        }
    }
}

impl<'de> Deserialize<'de> for LabelScheme {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            name: String,
            labels: Vec<LabelDef>,
        }
        let doc = Doc::deserialize(deserializer)?;
        LabelScheme::new(doc.name, doc.labels).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelMatch {
    Unique(usize),
    NoMatch,
    Ambiguous(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: String,
    pub value: u32,
    pub raw: String,
    pub attempts: u32,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions<'a> {
    pub stage: &'a StageModel,
    pub template: &'a str,
}

fn reminder(scheme: &LabelScheme) -> String {
    let names: Vec<&str> = scheme.labels.iter().map(|d| d.label.as_str()).collect();
    format!(
        "\n\nReminder: respond with exactly one of the following labels and nothing else: {}.\n",
        names.join(", ")
    )
}

pub fn render_verify_prompt(template: &str, claim: &str, context: &str, scheme: &LabelScheme) -> String {
    render(
        template,
        &[
            ("veracity labels", &scheme.render_for_prompt()),
            ("context", context),
            ("claim", claim),
        ],
    )
}

/// Classifies `claim` given arbitrary evidence text. One retry with a
/// stricter reminder is made when the output does not map to one label.
pub fn classify(
    claim: &str,
    context: &str,
    scheme: &LabelScheme,
    gateway: &Gateway,
    opts: &VerifyOptions<'_>,
) -> Result<Verdict, VerificationError> {
    let prompt = render_verify_prompt(opts.template, claim, context, scheme);
    let first = gateway.complete(&opts.stage.request(prompt.clone()))?;
    if let LabelMatch::Unique(i) = scheme.match_output(&first.text) {
        return Ok(verdict(scheme, i, first.text, 1));
    }
    log::debug!("verdict {:?} did not map to one label, retrying", first.text);
    let stricter = format!("{prompt}{}", reminder(scheme));
    let second = gateway.complete(&opts.stage.request(stricter))?;
    match scheme.match_output(&second.text) {
        LabelMatch::Unique(i) => Ok(verdict(scheme, i, second.text, 2)),
        _ => Err(VerificationError::UnparseableVerdict { raw: second.text }),
    }
}

fn verdict(scheme: &LabelScheme, i: usize, raw: String, attempts: u32) -> Verdict {
    let def = &scheme.labels[i];
    Verdict {
        label: def.label.clone(),
        value: def.value,
        raw,
        attempts,
    }
}

/// Classifies using the contrastive summary as the only evidence.
pub fn verify(
    claim: &str,
    summary: &ContrastiveSummary,
    scheme: &LabelScheme,
    gateway: &Gateway,
    opts: &VerifyOptions<'_>,
) -> Result<Verdict, VerificationError> {
    classify(claim, &summary.text, scheme, gateway, opts)
}

/// Collapses a six-way LIAR-RAW label onto the binary scheme:
/// pants-fire, false and barely-true become `false`, the rest `true`.
pub fn map_binary(label: &str) -> Result<&'static str, VerificationError> {
    let six = LabelScheme::liar_raw();
    let def = six.require(label)?;
    Ok(if def.value <= 3 { "false" } else { "true" })
}
