//! Knowledge graph types with claim/report provenance.
//!
//! A [`KnowledgeGraph`] is built through [`GraphBuilder`], which enforces the
//! structural invariants (unique entity keys, no self-loops, resolvable
//! endpoints, set semantics on triples). Once built the graph is immutable.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_key;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KgError {
    #[error("empty entity surface")]
    EmptySurface,
    #[error("empty entity class")]
    EmptyClass,
    #[error("empty relation label")]
    EmptyRelation,
    #[error("self-loop triple on entity {0}")]
    SelfLoop(EntityId),
    #[error("triple endpoint {0} does not resolve in the graph")]
    UnknownEntity(EntityId),
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

/// Open-vocabulary conceptual category of an entity.
///
/// Equality and hashing use the case-folded, whitespace-collapsed form; the
/// original spelling is kept for display.
#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityClass {
    name: String,
    key: String,
}

impl EntityClass {
    pub fn new(name: impl AsRef<str>) -> Result<Self, KgError> {
        let name = name.as_ref().trim();
        let key = normalize_key(name);
        if key.is_empty() {
            return Err(KgError::EmptyClass);
        }
        Ok(Self {
            name: name.to_string(),
            key,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn key(&self) -> &str {
        &self.key
    }
}

impl PartialEq for EntityClass {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for EntityClass {}

impl std::hash::Hash for EntityClass {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

impl fmt::Debug for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EntityClass({:?})", self.name)
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl TryFrom<String> for EntityClass {
    type Error = KgError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EntityClass> for String {
    fn from(value: EntityClass) -> Self {
        value.name
    }
}

/// Index of an entity inside its graph. Assigned densely in insertion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

// Field order is alphabetical so the serialized keys come out sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub class: EntityClass,
    pub id: EntityId,
    pub surface: String,
}

impl Entity {
    /// Identity key: normalized surface plus class.
    pub fn key(&self) -> (String, String) {
        (normalize_key(&self.surface), self.class.key().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Relation(String);

impl Relation {
    pub fn new(label: impl AsRef<str>) -> Result<Self, KgError> {
        let label = label.as_ref().trim();
        if label.is_empty() {
            return Err(KgError::EmptyRelation);
        }
        Ok(Self(label.to_string()))
    }

    pub fn label(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Relation {
    type Error = KgError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Relation> for String {
    fn from(value: Relation) -> Self {
        value.0
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a triple was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Claim,
    Report(usize),
}

impl Provenance {
    pub fn is_claim(&self) -> bool {
        matches!(self, Provenance::Claim)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Claim => f.write_str("claim"),
            Provenance::Report(i) => write!(f, "report {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub provenance: Provenance,
    pub relation: Relation,
    pub tail: EntityId,
}

/// Immutable knowledge graph. Serializes to the canonical
/// `{entities:[{class,id,surface}], triples:[{head,provenance,relation,tail}]}` form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    triples: Vec<Triple>,
}

impl KnowledgeGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, id: EntityId) -> Option<&Entity> {
        self.entities.get(id.0 as usize)
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.triples.is_empty()
    }

    /// Triples extracted from the claim text itself.
    pub fn claim_triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter().filter(|t| t.provenance.is_claim())
    }

    /// Distinct relation labels in first-seen order.
    pub fn relations(&self) -> Vec<&Relation> {
        let mut seen = Vec::new();
        for t in &self.triples {
            if !seen.contains(&&t.relation) {
                seen.push(&t.relation);
            }
        }
        seen
    }

    /// Class inventory in first-seen order.
    pub fn classes(&self) -> Vec<&EntityClass> {
        let mut seen: Vec<&EntityClass> = Vec::new();
        for e in &self.entities {
            if !seen.contains(&&e.class) {
                seen.push(&e.class);
            }
        }
        seen
    }

    /// Entities of `class` other than `exclude`, in id order. An unknown
    /// class yields an empty list.
    pub fn entities_of_class(&self, class: &EntityClass, exclude: EntityId) -> Vec<&Entity> {
        self.entities
            .iter()
            .filter(|e| e.id != exclude && &e.class == class)
            .collect()
    }

    /// Canonical JSON text (sorted keys, compact).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, KgError> {
        #[derive(Deserialize)]
        struct Doc {
            entities: Vec<Entity>,
            triples: Vec<Triple>,
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| KgError::Malformed(e.to_string()))?;
        Self::from_parts(doc.entities, doc.triples)
    }

    /// Rebuilds a graph from explicit entities and triples, validating ids.
    pub fn from_parts(entities: Vec<Entity>, triples: Vec<Triple>) -> Result<Self, KgError> {
        for (i, e) in entities.iter().enumerate() {
            if e.id.0 as usize != i {
                return Err(KgError::Malformed(format!(
                    "entity ids must be dense in order, found {} at position {i}",
                    e.id
                )));
            }
            if e.surface.trim().is_empty() {
                return Err(KgError::EmptySurface);
            }
        }
        let mut builder = GraphBuilder::new();
        for e in &entities {
            let id = builder.add_entity(&e.surface, e.class.clone())?;
            if id != e.id {
                return Err(KgError::Malformed(format!("duplicate entity key for {}", e.id)));
            }
        }
        for t in triples {
            builder.add_triple(t.head, t.relation, t.tail, t.provenance)?;
        }
        Ok(builder.build())
    }
}

impl<'de> Deserialize<'de> for KnowledgeGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            entities: Vec<Entity>,
            triples: Vec<Triple>,
        }
        let doc = Doc::deserialize(deserializer)?;
        KnowledgeGraph::from_parts(doc.entities, doc.triples).map_err(serde::de::Error::custom)
    }
}

/// Incremental constructor for [`KnowledgeGraph`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    entities: Vec<Entity>,
    by_key: HashMap<(String, String), EntityId>,
    triples: Vec<Triple>,
    seen_triples: std::collections::HashSet<Triple>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entity or returns the id of the existing one with the same
    /// (normalized surface, class) key.
    pub fn add_entity(&mut self, surface: &str, class: EntityClass) -> Result<EntityId, KgError> {
        let surface = surface.trim();
        let norm = normalize_key(surface);
        if norm.is_empty() {
            return Err(KgError::EmptySurface);
        }
        let key = (norm, class.key().to_string());
        if let Some(&id) = self.by_key.get(&key) {
            return Ok(id);
        }
        let id = EntityId(self.entities.len() as u32);
        self.entities.push(Entity {
            class,
            id,
            surface: surface.to_string(),
        });
        self.by_key.insert(key, id);
        Ok(id)
    }

    pub fn find(&self, surface: &str, class: &EntityClass) -> Option<EntityId> {
        self.by_key
            .get(&(normalize_key(surface), class.key().to_string()))
            .copied()
    }

    /// Adds a triple. Returns `Ok(false)` when an identical triple exists.
    pub fn add_triple(
        &mut self,
        head: EntityId,
        relation: Relation,
        tail: EntityId,
        provenance: Provenance,
    ) -> Result<bool, KgError> {
        for id in [head, tail] {
            if id.0 as usize >= self.entities.len() {
                return Err(KgError::UnknownEntity(id));
            }
        }
        if head == tail {
            return Err(KgError::SelfLoop(head));
        }
        let triple = Triple {
            head,
            provenance,
            relation,
            tail,
        };
        if !self.seen_triples.insert(triple.clone()) {
            return Ok(false);
        }
        self.triples.push(triple);
        Ok(true)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn build(self) -> KnowledgeGraph {
        KnowledgeGraph {
            entities: self.entities,
            triples: self.triples,
        }
    }
}

/// Unifies graphs by entity key, preserving triple provenance. Ids are
/// reassigned in first-seen order across the inputs.
pub fn merge<'a, I>(graphs: I) -> KnowledgeGraph
where
    I: IntoIterator<Item = &'a KnowledgeGraph>,
{
    let mut builder = GraphBuilder::new();
    for graph in graphs {
        let mut remap = Vec::with_capacity(graph.entities.len());
        for e in &graph.entities {
            let id = builder
                .add_entity(&e.surface, e.class.clone())
                .expect("entities of a built graph are valid");
            remap.push(id);
        }
        for t in &graph.triples {
            let head = remap[t.head.0 as usize];
            let tail = remap[t.tail.0 as usize];
            // Distinct source entities never collapse onto one key, so no
            // self-loop can appear here.
            builder
                .add_triple(head, t.relation.clone(), tail, t.provenance)
                .expect("remapped triple stays well-formed");
        }
    }
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(name: &str) -> EntityClass {
        EntityClass::new(name).unwrap()
    }

    fn rel(label: &str) -> Relation {
        Relation::new(label).unwrap()
    }

    fn people_and_places() -> KnowledgeGraph {
        let mut b = GraphBuilder::new();
        let a1 = b.add_entity("A1", class("Person")).unwrap();
        b.add_entity("A2", class("Person")).unwrap();
        let p1 = b.add_entity("P1", class("Place")).unwrap();
        b.add_entity("P2", class("Place")).unwrap();
        b.add_triple(a1, rel("visited"), p1, Provenance::Claim).unwrap();
        b.build()
    }

    #[test]
    fn entities_of_class_excludes_self() {
        let g = people_and_places();
        let person = class("person");
        let got: Vec<_> = g
            .entities_of_class(&person, EntityId(0))
            .iter()
            .map(|e| e.surface.as_str())
            .collect();
        assert_eq!(got, ["A2"]);
    }

    #[test]
    fn entities_of_class_singleton_is_empty() {
        let mut b = GraphBuilder::new();
        let a1 = b.add_entity("A1", class("Person")).unwrap();
        let g = b.build();
        assert!(g.entities_of_class(&class("Person"), a1).is_empty());
    }

    #[test]
    fn entities_of_class_filters_by_class() {
        let mut b = GraphBuilder::new();
        b.add_entity("A1", class("Person")).unwrap();
        let p1 = b.add_entity("P1", class("Place")).unwrap();
        b.add_entity("P2", class("Place")).unwrap();
        let g = b.build();
        let got: Vec<_> = g
            .entities_of_class(&class("Place"), p1)
            .iter()
            .map(|e| e.surface.clone())
            .collect();
        assert_eq!(got, ["P2"]);
        assert!(g.entities_of_class(&class("Planet"), p1).is_empty());
    }

    #[test]
    fn class_comparison_is_normalized() {
        assert_eq!(class("  Person "), class("person"));
        assert_eq!(class("Political  Party"), class("political party"));
        assert!(EntityClass::new("   ").is_err());
    }

    #[test]
    fn self_loops_rejected() {
        let mut b = GraphBuilder::new();
        let a = b.add_entity("A", class("X")).unwrap();
        assert_eq!(
            b.add_triple(a, rel("is"), a, Provenance::Claim),
            Err(KgError::SelfLoop(a))
        );
    }

    #[test]
    fn dangling_endpoint_rejected() {
        let mut b = GraphBuilder::new();
        let a = b.add_entity("A", class("X")).unwrap();
        assert_eq!(
            b.add_triple(a, rel("is"), EntityId(7), Provenance::Claim),
            Err(KgError::UnknownEntity(EntityId(7)))
        );
    }

    #[test]
    fn duplicate_triples_collapse() {
        let mut b = GraphBuilder::new();
        let a = b.add_entity("A", class("X")).unwrap();
        let c = b.add_entity("C", class("X")).unwrap();
        assert!(b.add_triple(a, rel("r"), c, Provenance::Claim).unwrap());
        assert!(!b.add_triple(a, rel("r"), c, Provenance::Claim).unwrap());
        assert!(b.add_triple(a, rel("r"), c, Provenance::Report(0)).unwrap());
        assert_eq!(b.build().triples().len(), 2);
    }

    #[test]
    fn merge_unifies_same_surface_and_class() {
        let mut b = GraphBuilder::new();
        let o = b.add_entity("Obama", class("Person")).unwrap();
        let u = b.add_entity("USA", class("Country")).unwrap();
        b.add_triple(o, rel("led"), u, Provenance::Claim).unwrap();
        let claim = b.build();

        let mut b = GraphBuilder::new();
        let o = b.add_entity("obama", class("person")).unwrap();
        let c = b.add_entity("Chicago", class("City")).unwrap();
        b.add_triple(o, rel("lived_in"), c, Provenance::Report(0)).unwrap();
        let report = b.build();

        let merged = merge([&claim, &report]);
        assert_eq!(merged.entities().len(), 3);
        assert_eq!(merged.triples().len(), 2);
        assert_eq!(merged.claim_triples().count(), 1);
        assert_eq!(merged.triples()[1].head, EntityId(0));
    }

    #[test]
    fn merge_of_nothing_is_empty() {
        assert!(merge(std::iter::empty()).is_empty());
    }

    #[test]
    fn merge_keeps_conflicting_classes_apart() {
        let mut b = GraphBuilder::new();
        b.add_entity("Paris", class("Place")).unwrap();
        let g1 = b.build();
        let mut b = GraphBuilder::new();
        b.add_entity("Paris", class("Person")).unwrap();
        let g2 = b.build();
        let merged = merge([&g1, &g2]);
        assert_eq!(merged.entities().len(), 2);
        assert_ne!(merged.entities()[0].class, merged.entities()[1].class);
    }

    #[test]
    fn canonical_json_has_sorted_keys_and_round_trips() {
        let g = people_and_places();
        let json = g.to_canonical_json();
        assert!(json.starts_with(r#"{"entities":[{"class":"Person","id":0,"surface":"A1"}"#));
        assert!(json.contains(r#""triples":[{"head":0,"provenance":"claim","relation":"visited","tail":2}]"#));
        let back = KnowledgeGraph::from_json(&json).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_canonical_json(), json);
    }

    #[test]
    fn report_provenance_serializes_with_index() {
        let json = serde_json::to_string(&Provenance::Report(3)).unwrap();
        assert_eq!(json, r#"{"report":3}"#);
    }

    #[test]
    fn from_json_rejects_bad_documents() {
        assert!(KnowledgeGraph::from_json("{").is_err());
        let dangling = r#"{"entities":[{"class":"X","id":0,"surface":"a"}],"triples":[{"head":0,"provenance":"claim","relation":"r","tail":4}]}"#;
        assert!(KnowledgeGraph::from_json(dangling).is_err());
    }
}
