//! Phased knowledge-graph extraction: entities, then classes, then relations.
//!
//! Each phase asks the model for JSON and keeps the raw output for audit.
//! Relations whose endpoints were not identified (and labeled) in the earlier
//! phases are dropped, never auto-created.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::ClaimCase;
use crate::gateway::{Gateway, GatewayError, StageModel};
use crate::kg::{merge, EntityClass, EntityId, GraphBuilder, KnowledgeGraph, Provenance, Relation};
use crate::prompts::{render, PromptSet};
use crate::text::normalize_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Entities,
    Labels,
    Relations,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Entities => "entity identification",
            Phase::Labels => "class labeling",
            Phase::Relations => "relation extraction",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExtractionError {
    #[error("cannot extract from empty text ({origin})")]
    EmptyInput { origin: Provenance },
    #[error("unparseable {phase} output for {origin}: {raw:?}")]
    Unparseable {
        phase: Phase,
        origin: Provenance,
        raw: String,
    },
    #[error("{phase} call failed for {origin}: {error}")]
    Gateway {
        phase: Phase,
        origin: Provenance,
        error: GatewayError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub text: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FewShotExamples {
    #[serde(default)]
    pub entities: Vec<FewShot>,
    #[serde(default)]
    pub labels: Vec<FewShot>,
    #[serde(default)]
    pub relations: Vec<FewShot>,
}

impl FewShotExamples {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../prompts/extraction_examples.json")).expect("built-in examples are valid")
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn for_phase(&self, phase: Phase) -> &[FewShot] {
        match phase {
            Phase::Entities => &self.entities,
            Phase::Labels => &self.labels,
            Phase::Relations => &self.relations,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub stage: StageModel,
    /// Extra attempts per phase after an unparseable answer.
    pub max_retries: u32,
    pub examples: FewShotExamples,
    /// Reports extracted concurrently per case.
    pub concurrency: usize,
}

impl ExtractionConfig {
    pub fn new(stage: StageModel) -> Self {
        Self {
            stage,
            max_retries: 2,
            examples: FewShotExamples::builtin(),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhasePayload {
    Entities(Vec<String>),
    Labels(Vec<(String, String)>),
    Triples(Vec<RawTriple>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionPhaseOutput {
    pub phase: Phase,
    /// Verbatim model output of the accepted attempt.
    pub raw: String,
    pub attempts: u32,
    pub parsed: PhasePayload,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub graph: KnowledgeGraph,
    pub phases: Vec<ExtractionPhaseOutput>,
    pub dropped_entities: usize,
    pub dropped_triples: usize,
}

/// Runs the three phases on one text. Every triple carries `source`.
pub fn extract_graph(
    text: &str,
    source: Provenance,
    config: &ExtractionConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<KnowledgeGraph, ExtractionError> {
    extract_graph_detailed(text, source, config, prompts, gateway).map(|e| e.graph)
}

pub fn extract_graph_detailed(
    text: &str,
    source: Provenance,
    config: &ExtractionConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<Extraction, ExtractionError> {
    if text.trim().is_empty() {
        return Err(ExtractionError::EmptyInput { origin: source });
    }
    let runner = PhaseRunner {
        text,
        source,
        config,
        gateway,
    };
    let mut phases = Vec::with_capacity(3);

    let entities = runner.run(Phase::Entities, &prompts.extract_entities, "", parse_entities)?;
    let entity_list = match &entities.parsed {
        PhasePayload::Entities(list) => list.clone(),
        _ => unreachable!(),
    };
    phases.push(entities);
    if entity_list.is_empty() {
        return Ok(Extraction {
            graph: KnowledgeGraph::empty(),
            phases,
            dropped_entities: 0,
            dropped_triples: 0,
        });
    }

    let listed = serde_json::to_string(&entity_list).expect("string list encodes");
    let labels = runner.run(Phase::Labels, &prompts.extract_labels, &listed, parse_labels)?;
    let label_pairs = match &labels.parsed {
        PhasePayload::Labels(pairs) => pairs.clone(),
        _ => unreachable!(),
    };
    phases.push(labels);

    let mut by_key: HashMap<String, &str> = HashMap::new();
    for (entity, class) in &label_pairs {
        by_key.entry(normalize_key(entity)).or_insert(class.as_str());
    }
    let mut builder = GraphBuilder::new();
    let mut surface_ids: HashMap<String, EntityId> = HashMap::new();
    let mut labeled = serde_json::Map::new();
    let mut dropped_entities = 0;
    for surface in &entity_list {
        let key = normalize_key(surface);
        let class = by_key.get(&key).and_then(|c| EntityClass::new(c).ok());
        let Some(class) = class else {
            log::debug!("entity {surface:?} has no usable class, dropping");
            dropped_entities += 1;
            continue;
        };
        labeled.insert(surface.clone(), Value::String(class.name().to_string()));
        let id = builder.add_entity(surface, class).expect("surface is non-empty");
        surface_ids.entry(key).or_insert(id);
    }
    if surface_ids.is_empty() {
        return Ok(Extraction {
            graph: KnowledgeGraph::empty(),
            phases,
            dropped_entities,
            dropped_triples: 0,
        });
    }

    let labeled = Value::Object(labeled).to_string();
    let relations = runner.run(Phase::Relations, &prompts.extract_relations, &labeled, parse_triples)?;
    let raw_triples = match &relations.parsed {
        PhasePayload::Triples(t) => t.clone(),
        _ => unreachable!(),
    };
    phases.push(relations);

    let mut dropped_triples = 0;
    for t in &raw_triples {
        let head = surface_ids.get(&normalize_key(&t.head));
        let tail = surface_ids.get(&normalize_key(&t.tail));
        let (Some(&head), Some(&tail), Ok(relation)) = (head, tail, Relation::new(&t.relation)) else {
            log::debug!("dropping triple with unidentified endpoint or empty relation: {t:?}");
            dropped_triples += 1;
            continue;
        };
        if builder.add_triple(head, relation, tail, source).is_err() {
            log::debug!("dropping self-loop triple: {t:?}");
            dropped_triples += 1;
        }
    }
    if dropped_triples > 0 {
        log::info!("{source}: dropped {dropped_triples} triple(s) during extraction");
    }

    Ok(Extraction {
        graph: builder.build(),
        phases,
        dropped_entities,
        dropped_triples,
    })
}

struct PhaseRunner<'a> {
    text: &'a str,
    source: Provenance,
    config: &'a ExtractionConfig,
    gateway: &'a Gateway,
}

impl PhaseRunner<'_> {
    fn run(
        &self,
        phase: Phase,
        template: &str,
        entities: &str,
        parse: fn(&str) -> Option<PhasePayload>,
    ) -> Result<ExtractionPhaseOutput, ExtractionError> {
        let examples = render_examples(self.config.examples.for_phase(phase));
        let prompt = render(
            template,
            &[("examples", &examples), ("entities", entities), ("text", self.text)],
        );
        let request = self.config.stage.request(prompt);
        let mut last_raw = String::new();
        for attempt in 0..=self.config.max_retries {
            let reply = if attempt == 0 {
                self.gateway.complete(&request)
            } else {
                self.gateway.complete_fresh(&request)
            }
            .map_err(|error| ExtractionError::Gateway {
                phase,
                origin: self.source,
                error,
            })?;
            if let Some(parsed) = parse(&reply.text) {
                return Ok(ExtractionPhaseOutput {
                    phase,
                    raw: reply.text,
                    attempts: attempt + 1,
                    parsed,
                });
            }
            log::debug!("{phase} output for {} unparseable (attempt {})", self.source, attempt + 1);
            last_raw = reply.text;
        }
        Err(ExtractionError::Unparseable {
            phase,
            origin: self.source,
            raw: last_raw,
        })
    }
}

fn render_examples(examples: &[FewShot]) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("\nExamples:\n");
    for (i, ex) in examples.iter().enumerate() {
        out.push_str(&format!("Example {} text: {}\nExample {} output: {}\n", i + 1, ex.text, i + 1, ex.output));
    }
    out
}

/// Finds the first JSON value in model output, tolerating code fences and
/// surrounding prose.
pub fn extract_json(raw: &str) -> Option<Value> {
    let trimmed = raw.trim();
    if let Ok(v) = serde_json::from_str::<Value>(trimmed) {
        return Some(v);
    }
    let mut search = trimmed;
    while let Some(pos) = search.find(['[', '{']) {
        let candidate = &search[pos..];
        let mut stream = serde_json::Deserializer::from_str(candidate).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
        search = &candidate[1..];
    }
    None
}

fn parse_entities(raw: &str) -> Option<PhasePayload> {
    let items = match extract_json(raw)? {
        Value::Array(items) => items,
        Value::Object(mut o) => match o.remove("entities") {
            Some(Value::Array(items)) => items,
            _ => return None,
        },
        _ => return None,
    };
    let mut out: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for item in items {
        let name = match &item {
            Value::String(s) => s.clone(),
            Value::Object(o) => ["name", "entity", "text"]
                .iter()
                .find_map(|k| o.get(*k).and_then(Value::as_str))?
                .to_string(),
            _ => return None,
        };
        let name = name.trim().to_string();
        if !name.is_empty() && seen.insert(normalize_key(&name)) {
            out.push(name);
        }
    }
    Some(PhasePayload::Entities(out))
}

fn parse_labels(raw: &str) -> Option<PhasePayload> {
    let mut pairs = Vec::new();
    match extract_json(raw)? {
        Value::Object(o) => {
            for (k, v) in o {
                pairs.push((k, v.as_str()?.to_string()));
            }
        }
        Value::Array(items) => {
            for item in items {
                let o = item.as_object()?;
                let name = ["entity", "name", "text"].iter().find_map(|k| o.get(*k).and_then(Value::as_str))?;
                let class = ["class", "label", "type", "category"]
                    .iter()
                    .find_map(|k| o.get(*k).and_then(Value::as_str))?;
                pairs.push((name.to_string(), class.to_string()));
            }
        }
        _ => return None,
    }
    Some(PhasePayload::Labels(pairs))
}

fn parse_triples(raw: &str) -> Option<PhasePayload> {
    let items = match extract_json(raw)? {
        Value::Array(items) => items,
        Value::Object(mut o) => match o.remove("triples").or_else(|| o.remove("relations")) {
            Some(Value::Array(items)) => items,
            _ => return None,
        },
        _ => return None,
    };
    let mut out = Vec::new();
    for item in items {
        let triple = match &item {
            Value::Array(parts) if parts.len() == 3 => RawTriple {
                head: parts[0].as_str()?.to_string(),
                relation: parts[1].as_str()?.to_string(),
                tail: parts[2].as_str()?.to_string(),
            },
            Value::Object(o) => {
                let pick = |keys: &[&str]| keys.iter().find_map(|k| o.get(*k).and_then(Value::as_str)).map(str::to_string);
                RawTriple {
                    head: pick(&["head", "subject", "source"])?,
                    relation: pick(&["relation", "predicate", "type"])?,
                    tail: pick(&["tail", "object", "target"])?,
                }
            }
            _ => return None,
        };
        out.push(triple);
    }
    Some(PhasePayload::Triples(out))
}

/// Extracts the claim and each report separately and merges the results.
pub fn extract_case(
    case: &ClaimCase,
    config: &ExtractionConfig,
    prompts: &PromptSet,
    gateway: &Gateway,
) -> Result<KnowledgeGraph, ExtractionError> {
    let claim_graph = extract_graph(&case.claim, Provenance::Claim, config, prompts, gateway)?;
    let texts: Vec<(usize, String)> = case.reports.iter().map(|r| (r.index, r.text())).collect();
    let mut report_graphs: Vec<KnowledgeGraph> = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(config.concurrency.max(1)) {
        let results: Vec<Result<KnowledgeGraph, ExtractionError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(i, text)| {
                    s.spawn(move || extract_graph(text, Provenance::Report(*i), config, prompts, gateway))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("extraction worker panicked")).collect()
        });
        for r in results {
            report_graphs.push(r?);
        }
    }
    Ok(merge(std::iter::once(&claim_graph).chain(report_graphs.iter())))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{BackendError, FnBackend, RetryPolicy, ScriptedBackend};

    fn config() -> ExtractionConfig {
        let mut c = ExtractionConfig::new(StageModel::new("extractor"));
        c.examples = FewShotExamples::default();
        c
    }

    fn scripted(outputs: &[&str]) -> (Gateway, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::new(outputs.iter().copied()));
        (Gateway::new(backend.clone()), backend)
    }

    #[test]
    fn empty_text_is_rejected() {
        let (gw, _) = scripted(&[]);
        let err = extract_graph("  ", Provenance::Claim, &config(), &PromptSet::default(), &gw).unwrap_err();
        assert_eq!(err, ExtractionError::EmptyInput { origin: Provenance::Claim });
    }

    #[test]
    fn scripted_phases_build_the_graph() {
        let (gw, backend) = scripted(&[
            r#"["X", "Y"]"#,
            r#"{"X": "Person", "Y": "Org"}"#,
            r#"[{"head": "X", "relation": "works_for", "tail": "Y"}]"#,
        ]);
        let e = extract_graph_detailed("X works for Y.", Provenance::Report(2), &config(), &PromptSet::default(), &gw)
            .unwrap();
        assert_eq!(e.graph.entities().len(), 2);
        assert_eq!(e.graph.triples().len(), 1);
        assert_eq!(e.graph.triples()[0].provenance, Provenance::Report(2));
        assert_eq!(e.graph.entities()[1].class.name(), "Org");
        assert_eq!(e.phases.len(), 3);
        assert_eq!(e.phases[0].raw, r#"["X", "Y"]"#);
        let prompts = backend.prompts();
        assert!(prompts[0].contains("Current step: 1. Extract nodes."));
        assert!(prompts[1].contains(r#"Entities: ["X","Y"]"#));
        assert!(prompts[2].contains(r#"Labeled entities: {"X":"Person","Y":"Org"}"#));
        assert!(prompts[2].ends_with("Text: X works for Y.\n"));
    }

    #[test]
    fn dangling_triple_is_dropped() {
        let (gw, _) = scripted(&[
            r#"["X", "Y"]"#,
            r#"{"X": "Person", "Y": "Org"}"#,
            r#"[["X", "works_for", "Y"], ["X", "knows", "Z"]]"#,
        ]);
        let e = extract_graph_detailed("t", Provenance::Claim, &config(), &PromptSet::default(), &gw).unwrap();
        assert_eq!(e.dropped_triples, 1);
        assert_eq!(e.graph.triples().len(), 1);
    }

    #[test]
    fn self_loops_and_unlabeled_entities_are_dropped() {
        let (gw, _) = scripted(&[
            r#"["X", "Y", "W"]"#,
            r#"{"X": "Person", "Y": "Org"}"#,
            r#"[["X", "is", "x"], ["W", "r", "Y"]]"#,
        ]);
        let e = extract_graph_detailed("t", Provenance::Claim, &config(), &PromptSet::default(), &gw).unwrap();
        assert_eq!(e.dropped_entities, 1);
        assert_eq!(e.dropped_triples, 2);
        assert!(e.graph.triples().is_empty());
    }

    #[test]
    fn empty_entity_list_short_circuits() {
        let (gw, backend) = scripted(&["[]"]);
        let g = extract_graph("t", Provenance::Claim, &config(), &PromptSet::default(), &gw).unwrap();
        assert!(g.is_empty());
        assert_eq!(backend.prompts().len(), 1);
    }

    #[test]
    fn junk_output_retries_then_fails_with_raw() {
        let (gw, backend) = scripted(&["no json here", "still nothing", "nope"]);
        let err = extract_graph("t", Provenance::Claim, &config(), &PromptSet::default(), &gw).unwrap_err();
        assert_eq!(
            err,
            ExtractionError::Unparseable {
                phase: Phase::Entities,
                origin: Provenance::Claim,
                raw: "nope".into()
            }
        );
        assert_eq!(backend.prompts().len(), 3);
    }

    #[test]
    fn retry_recovers_from_fenced_output() {
        let (gw, _) = scripted(&[
            "sorry",
            "Here you go:\n```json\n[\"A\", \"B\"]\n```",
            r#"{"A": "T", "B": "T"}"#,
            "[]",
        ]);
        let e = extract_graph_detailed("t", Provenance::Claim, &config(), &PromptSet::default(), &gw).unwrap();
        assert_eq!(e.phases[0].attempts, 2);
        assert_eq!(e.graph.entities().len(), 2);
    }

    #[test]
    fn gateway_failure_names_phase_and_source() {
        let backend = Arc::new(ScriptedBackend::from_results(vec![Err(BackendError::Transport("x".into()))]));
        let gw = Gateway::new(backend).with_retry(RetryPolicy::immediate(0));
        let err = extract_graph("t", Provenance::Report(4), &config(), &PromptSet::default(), &gw).unwrap_err();
        assert!(matches!(
            err,
            ExtractionError::Gateway {
                phase: Phase::Entities,
                origin: Provenance::Report(4),
                ..
            }
        ));
    }

    /// Responds from a table keyed on the `Text:` line of the prompt.
    fn table_backend(table: Vec<(&'static str, [&'static str; 3])>) -> Arc<FnBackend> {
        Arc::new(FnBackend::new(move |req| {
            let text = req.prompt.rsplit("Text: ").next().unwrap().trim();
            let phase = if req.prompt.contains("Current step: 1.") {
                0
            } else if req.prompt.contains("Current step: 2.") {
                1
            } else {
                2
            };
            table
                .iter()
                .find(|(t, _)| *t == text)
                .map(|(_, out)| out[phase].to_string())
                .ok_or_else(|| BackendError::Protocol(format!("no fixture for {text}")))
        }))
    }

    #[test]
    fn case_extraction_merges_sources_with_provenance() {
        let backend = table_backend(vec![
            ("Obama visited Paris.", [r#"["Obama","Paris"]"#, r#"{"Obama":"Person","Paris":"City"}"#, r#"[["Obama","visited","Paris"]]"#]),
            ("Obama visited Rome.", [r#"["Obama","Rome"]"#, r#"{"Obama":"Person","Rome":"City"}"#, r#"[["Obama","visited","Rome"]]"#]),
            ("Biden visited Paris.", [r#"["Biden","Paris"]"#, r#"{"Biden":"Person","Paris":"City"}"#, r#"[["Biden","visited","Paris"]]"#]),
        ]);
        let gw = Gateway::new(backend);
        let case = ClaimCase::new("c1", "Obama visited Paris.", &["Obama visited Rome.", "Biden visited Paris."]);
        let g = extract_case(&case, &config(), &PromptSet::default(), &gw).unwrap();
        let surfaces: Vec<_> = g.entities().iter().map(|e| e.surface.as_str()).collect();
        assert_eq!(surfaces, ["Obama", "Paris", "Rome", "Biden"]);
        let triples: Vec<_> = g
            .triples()
            .iter()
            .map(|t| (t.head.0, t.tail.0, t.provenance))
            .collect();
        assert_eq!(
            triples,
            [(0, 1, Provenance::Claim), (0, 2, Provenance::Report(0)), (3, 1, Provenance::Report(1))]
        );
        assert_eq!(g.claim_triples().count(), 1);
    }

    #[test]
    fn claim_only_case_has_only_claim_triples() {
        let backend = table_backend(vec![(
            "A met B.",
            [r#"["A","B"]"#, r#"{"A":"P","B":"P"}"#, r#"[["A","met","B"]]"#],
        )]);
        let gw = Gateway::new(backend);
        let g = extract_case(&ClaimCase::new("c", "A met B.", &[]), &config(), &PromptSet::default(), &gw).unwrap();
        assert_eq!(g.triples().len(), g.claim_triples().count());
    }

    #[test]
    fn empty_report_graph_does_not_disturb_others() {
        let backend = table_backend(vec![
            ("A met B.", [r#"["A","B"]"#, r#"{"A":"P","B":"P"}"#, r#"[["A","met","B"]]"#]),
            ("Nothing here.", ["[]", "{}", "[]"]),
        ]);
        let gw = Gateway::new(backend);
        let case = ClaimCase::new("c", "A met B.", &["Nothing here."]);
        let g = extract_case(&case, &config(), &PromptSet::default(), &gw).unwrap();
        assert_eq!((g.entities().len(), g.triples().len()), (2, 1));
    }

    #[test]
    fn json_extraction_tolerates_prose() {
        assert_eq!(extract_json("ok: [1, 2] trailing"), Some(serde_json::json!([1, 2])));
        assert_eq!(extract_json("[broken {\"a\": 1}"), Some(serde_json::json!({"a": 1})));
        assert_eq!(extract_json("nothing"), None);
    }
}
