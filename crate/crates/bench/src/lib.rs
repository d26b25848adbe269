//! Fixtures shared by the benchmarks.

use claimgraph::kg::{EntityClass, GraphBuilder, KnowledgeGraph, Provenance, Relation};

/// A claim graph with `people` entities of one class and `places` of
/// another, joined by `visited` triples so every triple has alternatives on
/// both sides.
pub fn dense_claim_graph(people: usize, places: usize) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    let person = EntityClass::new("Person").unwrap();
    let place = EntityClass::new("Place").unwrap();
    let ps: Vec<_> = (0..people).map(|i| b.add_entity(&format!("person {i}"), person.clone()).unwrap()).collect();
    let ls: Vec<_> = (0..places).map(|i| b.add_entity(&format!("place {i}"), place.clone()).unwrap()).collect();
    for (i, p) in ps.iter().enumerate() {
        let l = ls[i % ls.len()];
        b.add_triple(*p, Relation::new("visited").unwrap(), l, Provenance::Claim).unwrap();
    }
    b.build()
}
