use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use claimgraph::gateway::QuestionEmbedding;
use claimgraph::verification::LabelScheme;
use claimgraph::{generate_candidates, mmr_rank, prf};
use claimgraph_bench::dense_claim_graph;

fn embeddings(n: usize, dim: usize) -> Vec<QuestionEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..n)
        .map(|_| QuestionEmbedding::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn bench_mmr(c: &mut Criterion) {
    let mut g = c.benchmark_group("mmr_rank");
    for n in [16, 64, 256] {
        let es = embeddings(n, 256);
        g.bench_with_input(BenchmarkId::from_parameter(n), &es, |b, es| b.iter(|| mmr_rank(black_box(es)).unwrap()));
    }
    g.finish();
}

fn bench_candidates(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate_candidates");
    for n in [4, 16, 64] {
        let graph = dense_claim_graph(n, n / 2 + 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &graph, |b, graph| {
            b.iter(|| generate_candidates(black_box(graph)))
        });
    }
    g.finish();
}

fn bench_prf(c: &mut Criterion) {
    let scheme = LabelScheme::liar_raw();
    let labels: Vec<String> = scheme.labels().iter().map(|d| d.label.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs: Vec<(String, String)> = (0..12_590)
        .map(|_| {
            let g = labels[rng.random_range(0..labels.len())].clone();
            let p = labels[rng.random_range(0..labels.len())].clone();
            (g, p)
        })
        .collect();
    c.bench_function("prf/12590", |b| b.iter(|| prf(black_box(&pairs), &scheme).unwrap()));
}

criterion_group!(benches, bench_mmr, bench_candidates, bench_prf);
criterion_main!(benches);
