//! Contrastive question generation by same-class entity substitution, and
//! MMR re-ranking of the candidates over their embeddings.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, QuestionEmbedding};
use crate::kg::{Entity, EntityId, KnowledgeGraph, Triple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveQuestion {
    pub text: String,
    pub triple: Triple,
    pub side: Side,
    pub alternative: EntityId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStep {
    pub index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingTrace {
    pub initial_query: Option<usize>,
    pub steps: Vec<RankStep>,
}

impl RankingTrace {
    pub fn order(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.index).collect()
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RankingError {
    #[error("no embeddings to rank")]
    Empty,
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("embedding {0} is a zero vector")]
    ZeroVector(usize),
    #[error("embedding {0} has non-finite components")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ContrastiveError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("embedding {} question(s) failed: {error}", questions.len())]
    Embedding { error: GatewayError, questions: Vec<String> },
    #[error(transparent)]
    Ranking(#[from] RankingError),
}

/// Renders the question for substituting `alternative` on `side` of `triple`.
pub fn question_text(graph: &KnowledgeGraph, triple: &Triple, side: Side, alternative: &Entity) -> String {
    let head = surface(graph, triple.head);
    let tail = surface(graph, triple.tail);
    let rel = triple.relation.label();
    match side {
        Side::Head => format!(
            "Why did {head} {rel} {tail}, rather than {} {rel} {tail}?",
            alternative.surface
        ),
        Side::Tail => format!(
            "Why did {head} {rel} {tail}, rather than {head} {rel} {}?",
            alternative.surface
        ),
    }
}

fn surface(graph: &KnowledgeGraph, id: EntityId) -> &str {
    graph.entity(id).map(|e| e.surface.as_str()).unwrap_or("")
}

/// Candidates for every claim triple, head substitutions before tail
/// substitutions, deduplicated by text with the first occurrence kept.
pub fn generate_candidates(graph: &KnowledgeGraph) -> Vec<ContrastiveQuestion> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for triple in graph.claim_triples() {
        for (side, replaced) in [(Side::Head, triple.head), (Side::Tail, triple.tail)] {
            let Some(original) = graph.entity(replaced) else { continue };
            for alt in graph.entities_of_class(&original.class, replaced) {
                let text = question_text(graph, triple, side, alt);
                if seen.insert(text.clone()) {
                    out.push(ContrastiveQuestion {
                        text,
                        triple: triple.clone(),
                        side,
                        alternative: alt.id,
                    });
                }
            }
        }
    }
    out
}

fn validate(embeddings: &[QuestionEmbedding]) -> Result<Vec<f64>, RankingError> {
    let first = embeddings.first().ok_or(RankingError::Empty)?;
    let dim = first.dim();
    let mut norms = Vec::with_capacity(embeddings.len());
    for (index, e) in embeddings.iter().enumerate() {
        if e.dim() != dim {
            return Err(RankingError::DimensionMismatch {
                index,
                expected: dim,
                got: e.dim(),
            });
        }
        if e.vector.iter().any(|x| !x.is_finite()) {
            return Err(RankingError::NonFinite(index));
        }
        let n = e.norm();
        if n == 0.0 || dim == 0 {
            return Err(RankingError::ZeroVector(index));
        }
        norms.push(n);
    }
    Ok(norms)
}

fn similarity_matrix(embeddings: &[QuestionEmbedding]) -> Result<Vec<Vec<f64>>, RankingError> {
    let norms = validate(embeddings)?;
    let n = embeddings.len();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = embeddings[i]
                .vector
                .iter()
                .zip(&embeddings[j].vector)
                .map(|(a, b)| a * b)
                .sum();
            let c = dot / (norms[i] * norms[j]);
            sim[i][j] = c;
            sim[j][i] = c;
        }
    }
    Ok(sim)
}

fn initial_from_matrix(sim: &[Vec<f64>]) -> usize {
    let n = sim.len();
    if n == 1 {
        return 0;
    }
    let mut best = 0;
    let mut best_avg = f64::NEG_INFINITY;
    for (i, row) in sim.iter().enumerate() {
        let total: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| s).sum();
        let avg = total / (n - 1) as f64;
        if avg > best_avg {
            best = i;
            best_avg = avg;
        }
    }
    best
}

/// Index of the embedding with the highest mean cosine similarity to all
/// the others. Ties go to the lowest index.
pub fn select_initial_query(embeddings: &[QuestionEmbedding]) -> Result<usize, RankingError> {
    Ok(initial_from_matrix(&similarity_matrix(embeddings)?))
}

/// Ranks every candidate by maximal marginal relevance against the initial
/// query. An empty input yields an empty trace.
pub fn mmr_rank(embeddings: &[QuestionEmbedding]) -> Result<RankingTrace, RankingError> {
    if embeddings.is_empty() {
        return Ok(RankingTrace::default());
    }
    let sim = similarity_matrix(embeddings)?;
    let n = sim.len();
    let theta = initial_from_matrix(&sim);
    let mut selected = vec![false; n];
    // Running max similarity to the selected set, per candidate.
    let mut redundancy = vec![f64::NEG_INFINITY; n];
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for q in (0..n).filter(|&q| !selected[q]) {
            let red = if steps.is_empty() { 0.0 } else { redundancy[q] };
            let score = sim[q][theta] - red;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((q, score));
            }
        }
        let (pick, score) = best.expect("an unselected candidate remains");
        selected[pick] = true;
        for q in 0..n {
            redundancy[q] = redundancy[q].max(sim[q][pick]);
        }
        steps.push(RankStep { index: pick, score });
    }
    Ok(RankingTrace {
        initial_query: Some(theta),
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formulation {
    pub candidate_count: usize,
    pub questions: Vec<ContrastiveQuestion>,
    pub trace: RankingTrace,
}

#[derive(Debug, Clone)]
pub struct FormulateOptions<'a> {
    pub k: usize,
    pub embedding_model: &'a str,
    /// Cap on candidates embedded per case; `None` keeps all.
    pub candidate_limit: Option<usize>,
}

/// Generates, embeds and ranks candidates, returning the top `k`.
pub fn formulate(
    graph: &KnowledgeGraph,
    gateway: &Gateway,
    opts: &FormulateOptions<'_>,
) -> Result<Formulation, ContrastiveError> {
    if opts.k == 0 {
        return Err(ContrastiveError::ZeroK);
    }
    let mut candidates = generate_candidates(graph);
    if let Some(limit) = opts.candidate_limit {
        candidates.truncate(limit);
    }
    if candidates.is_empty() {
        return Ok(Formulation {
            candidate_count: 0,
            questions: Vec::new(),
            trace: RankingTrace::default(),
        });
    }
    let texts: Vec<String> = candidates.iter().map(|q| q.text.clone()).collect();
    let embeddings = gateway
        .embed(&texts, opts.embedding_model)
        .map_err(|error| ContrastiveError::Embedding {
            error,
            questions: texts.clone(),
        })?;
    let trace = mmr_rank(&embeddings)?;
    let questions = trace
        .steps
        .iter()
        .take(opts.k)
        .map(|s| candidates[s.index].clone())
        .collect();
    Ok(Formulation {
        candidate_count: candidates.len(),
        questions,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::gateway::{HashEmbedder, ScriptedBackend};
    use crate::kg::{EntityClass, GraphBuilder, Provenance, Relation};

    fn emb(v: &[f64]) -> QuestionEmbedding {
        QuestionEmbedding::new(v.to_vec())
    }

    fn class(name: &str) -> EntityClass {
        EntityClass::new(name).unwrap()
    }

    fn visit_graph() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let a1 = b.add_entity("A1", class("Person")).unwrap();
        b.add_entity("A2", class("Person")).unwrap();
        let p1 = b.add_entity("P1", class("Place")).unwrap();
        b.add_entity("P2", class("Place")).unwrap();
        b.add_entity("P3", class("Place")).unwrap();
        b.add_triple(a1, Relation::new("visited").unwrap(), p1, Provenance::Claim)
            .unwrap();
        b.build()
    }

    #[test]
    fn empty_claim_set_yields_no_candidates() {
        assert!(generate_candidates(&KnowledgeGraph::empty()).is_empty());
        let mut b = GraphBuilder::new();
        let x = b.add_entity("X", class("T")).unwrap();
        let y = b.add_entity("Y", class("T")).unwrap();
        b.add_triple(x, Relation::new("r").unwrap(), y, Provenance::Report(0))
            .unwrap();
        assert!(generate_candidates(&b.build()).is_empty());
    }

    #[test]
    fn substitutes_each_side_independently() {
        let qs = generate_candidates(&visit_graph());
        let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(
            texts,
            [
                "Why did A1 visited P1, rather than A2 visited P1?",
                "Why did A1 visited P1, rather than A1 visited P2?",
                "Why did A1 visited P1, rather than A1 visited P3?",
            ]
        );
        assert_eq!(qs[0].side, Side::Head);
        assert_eq!(qs[0].alternative, EntityId(1));
        assert_eq!(qs[2].alternative, EntityId(4));
    }

    #[test]
    fn head_without_alternatives_still_gets_tail_questions() {
        let mut b = GraphBuilder::new();
        let a = b.add_entity("A", class("Person")).unwrap();
        let p = b.add_entity("P", class("Place")).unwrap();
        b.add_entity("Q", class("Place")).unwrap();
        b.add_entity("R", class("Place")).unwrap();
        b.add_triple(a, Relation::new("visited").unwrap(), p, Provenance::Claim)
            .unwrap();
        let qs = generate_candidates(&b.build());
        assert_eq!(qs.len(), 2);
        assert!(qs.iter().all(|q| q.side == Side::Tail));
    }

    #[test]
    fn duplicate_texts_are_collapsed() {
        // Two same-surface entities of different classes render identically.
        let mut b = GraphBuilder::new();
        let a = b.add_entity("A", class("Person")).unwrap();
        let p = b.add_entity("P", class("Place")).unwrap();
        b.add_entity("Q", class("Place")).unwrap();
        b.add_entity("Q", class("Region")).unwrap();
        let r = b.add_entity("P", class("Region")).unwrap();
        b.add_triple(a, Relation::new("near").unwrap(), p, Provenance::Claim).unwrap();
        b.add_triple(a, Relation::new("near").unwrap(), r, Provenance::Claim).unwrap();
        let qs = generate_candidates(&b.build());
        assert_eq!(qs.len(), 1);
    }

    #[test]
    fn initial_query_examples() {
        assert_eq!(select_initial_query(&[emb(&[1.0, 0.0])]).unwrap(), 0);
        let three = [emb(&[1.0, 0.0]), emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        assert_eq!(select_initial_query(&three).unwrap(), 0);
        assert_eq!(select_initial_query(&[emb(&[0.3, 0.4]), emb(&[0.3, 0.4])]).unwrap(), 0);
    }

    #[test]
    fn mmr_examples() {
        let three = [emb(&[1.0, 0.0]), emb(&[1.0, 0.0]), emb(&[0.0, 1.0])];
        let trace = mmr_rank(&three).unwrap();
        assert_eq!(trace.initial_query, Some(0));
        assert_eq!(trace.order(), [0, 1, 2]);
        assert_eq!(trace.steps[0].score, 1.0);
        assert_eq!(trace.steps[1].score, 0.0);
        assert_eq!(mmr_rank(&[emb(&[2.0, 1.0])]).unwrap().order(), [0]);
        let ortho = [emb(&[1.0, 0.0, 0.0]), emb(&[0.0, 1.0, 0.0]), emb(&[0.0, 0.0, 1.0])];
        assert_eq!(mmr_rank(&ortho).unwrap().order(), [0, 1, 2]);
    }

    #[test]
    fn rejects_bad_embeddings() {
        assert_eq!(select_initial_query(&[]), Err(RankingError::Empty));
        assert_eq!(
            mmr_rank(&[emb(&[1.0, 0.0]), emb(&[1.0])]),
            Err(RankingError::DimensionMismatch {
                index: 1,
                expected: 2,
                got: 1
            })
        );
        assert_eq!(mmr_rank(&[emb(&[1.0]), emb(&[0.0])]), Err(RankingError::ZeroVector(1)));
        assert_eq!(mmr_rank(&[]).unwrap(), RankingTrace::default());
    }

    fn gateway(dim: usize) -> Gateway {
        Gateway::new(Arc::new(ScriptedBackend::new(Vec::<String>::new()))).with_embedder(Arc::new(HashEmbedder::new(dim)))
    }

    fn opts(k: usize) -> FormulateOptions<'static> {
        FormulateOptions {
            k,
            embedding_model: "hash",
            candidate_limit: None,
        }
    }

    fn dense_graph(people: usize, places: usize) -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let a = b.add_entity("Person 0", class("Person")).unwrap();
        for i in 1..people {
            b.add_entity(&format!("Person {i}"), class("Person")).unwrap();
        }
        let p = b.add_entity("Place 0", class("Place")).unwrap();
        for i in 1..places {
            b.add_entity(&format!("Place {i}"), class("Place")).unwrap();
        }
        b.add_triple(a, Relation::new("visited").unwrap(), p, Provenance::Claim)
            .unwrap();
        b.build()
    }

    #[test]
    fn formulate_caps_at_pool_size() {
        let f = formulate(&visit_graph(), &gateway(16), &opts(5)).unwrap();
        assert_eq!(f.candidate_count, 3);
        assert_eq!(f.questions.len(), 3);
        assert_eq!(f.trace.steps.len(), 3);
    }

    #[test]
    fn formulate_on_empty_pool() {
        let f = formulate(&KnowledgeGraph::empty(), &gateway(16), &opts(5)).unwrap();
        assert_eq!(f.candidate_count, 0);
        assert!(f.questions.is_empty());
        assert_eq!(f.trace, RankingTrace::default());
    }

    #[test]
    fn formulate_is_a_prefix_of_the_full_ranking() {
        let g = dense_graph(4, 7);
        let gw = gateway(32);
        let five = formulate(&g, &gw, &opts(5)).unwrap();
        let all = formulate(&g, &gw, &opts(100)).unwrap();
        assert_eq!(all.candidate_count, 9);
        assert_eq!(five.questions[..], all.questions[..5]);
        assert_eq!(five.trace, all.trace);
    }

    #[test]
    fn formulate_rejects_zero_k_and_reports_texts_on_embed_failure() {
        assert_eq!(formulate(&visit_graph(), &gateway(8), &opts(0)), Err(ContrastiveError::ZeroK));
        let no_embedder = Gateway::new(Arc::new(ScriptedBackend::new(Vec::<String>::new())));
        match formulate(&visit_graph(), &no_embedder, &opts(2)) {
            Err(ContrastiveError::Embedding { questions, .. }) => assert_eq!(questions.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn candidate_limit_truncates_before_ranking() {
        let g = dense_graph(4, 7);
        let mut o = opts(5);
        o.candidate_limit = Some(4);
        let f = formulate(&g, &gateway(8), &o).unwrap();
        assert_eq!(f.candidate_count, 4);
        assert_eq!(f.questions.len(), 4);
    }

    fn arb_embeddings() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..6).prop_flat_map(|dim| {
            prop::collection::vec(
                prop::collection::vec(-4i8..=4, dim).prop_filter("non-zero", |v| v.iter().any(|&x| x != 0)),
                1..9,
            )
            .prop_map(|vs| vs.into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect())
        })
    }

    fn arb_graph() -> impl Strategy<Value = KnowledgeGraph> {
        let entity = (0usize..6, 0usize..3);
        (prop::collection::vec(entity, 2..10), prop::collection::vec((0usize..10, 0usize..10, any::<bool>()), 0..8))
            .prop_map(|(ents, trips)| {
                let mut b = GraphBuilder::new();
                let mut ids = Vec::new();
                for (s, c) in ents {
                    ids.push(b.add_entity(&format!("n{s}"), class(&format!("C{c}"))).unwrap());
                }
                for (h, t, claim) in trips {
                    let (h, t) = (ids[h % ids.len()], ids[t % ids.len()]);
                    let prov = if claim { Provenance::Claim } else { Provenance::Report(0) };
                    let _ = b.add_triple(h, Relation::new("rel").unwrap(), t, prov);
                }
                b.build()
            })
    }

    proptest! {
        #[test]
        fn ranking_is_a_permutation(vs in arb_embeddings()) {
            let es: Vec<_> = vs.iter().map(|v| emb(v)).collect();
            let mut order = mmr_rank(&es).unwrap().order();
            order.sort_unstable();
            prop_assert_eq!(order, (0..es.len()).collect::<Vec<_>>());
        }

        #[test]
        fn ranking_is_scale_invariant(vs in arb_embeddings(), exp in -8i32..8) {
            let scale = 2f64.powi(exp);
            let es: Vec<_> = vs.iter().map(|v| emb(v)).collect();
            let scaled: Vec<_> = vs.iter().map(|v| emb(&v.iter().map(|x| x * scale).collect::<Vec<_>>())).collect();
            prop_assert_eq!(mmr_rank(&es).unwrap().order(), mmr_rank(&scaled).unwrap().order());
        }

        #[test]
        fn substitutions_stay_within_class(g in arb_graph()) {
            for q in generate_candidates(&g) {
                let replaced = match q.side { Side::Head => q.triple.head, Side::Tail => q.triple.tail };
                prop_assert_ne!(replaced, q.alternative);
                prop_assert_eq!(&g.entity(replaced).unwrap().class, &g.entity(q.alternative).unwrap().class);
                let alt = g.entity(q.alternative).unwrap();
                prop_assert_eq!(&q.text, &question_text(&g, &q.triple, q.side, alt));
            }
        }

        #[test]
        fn candidate_texts_are_unique(g in arb_graph()) {
            let qs = generate_candidates(&g);
            let unique: HashSet<_> = qs.iter().map(|q| &q.text).collect();
            prop_assert_eq!(unique.len(), qs.len());
        }
    }
}
