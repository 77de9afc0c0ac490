//! Compares the rayon-backed document map against the sequential
//! fallback on the three hot corpus-level loops: graph construction,
//! batch gradient evaluation and extraction.
//!
//! Built with default features, `par_map` uses the rayon pool;
//! with `--no-default-features` both arms run sequentially.

use criterion::{criterion_group, criterion_main, Criterion};
use keygraph::beam::{extract_keyphrases, ExtractionConfig};
use keygraph::corpus::{ingest, DatasetRecord, IngestedDataset, Split};
use keygraph::exec::{par_map, seq_map};
use keygraph::graph::build_graph_from_doc;
use keygraph::model::{ModelConfig, ModelState, Phase, Vocab};
use keygraph::text::{TextPipeline, TokenizedDocument};
use keygraph::trainer::doc_pass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_docs(n: usize, len: usize, vocab: usize) -> Vec<TokenizedDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    (0..n)
        .map(|_| {
            let stems: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.random_range(0..vocab)))
                .collect();
            TokenizedDocument {
                tokens: stems.clone(),
                stems,
            }
        })
        .collect()
}

fn synthetic_dataset(n: usize) -> IngestedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab = [
        "traffic", "noise", "urban", "planning", "sensor", "network", "graph", "model",
        "signal", "filter", "energy", "storage", "study", "analysis", "data", "method",
    ];
    let records: Vec<DatasetRecord> = (0..n)
        .map(|i| {
            let a = rng.random_range(0..vocab.len() / 2) * 2;
            let b = rng.random_range(0..vocab.len() / 2) * 2;
            let phrase_a = format!("{} {}", vocab[a], vocab[a + 1]);
            let phrase_b = format!("{} {}", vocab[b], vocab[b + 1]);
            let mut words = Vec::new();
            for _ in 0..8 {
                words.push(vocab[rng.random_range(0..vocab.len())]);
            }
            DatasetRecord {
                id: Some(format!("d{i}")),
                title: phrase_a.clone(),
                abstract_text: format!("{} {} {}", words.join(" "), phrase_a, phrase_b),
                keyphrases: vec![phrase_a, phrase_b],
            }
        })
        .collect();
    ingest(&records, &TextPipeline::default(), Split::Train)
}

fn small_model(dataset: &IngestedDataset) -> ModelState<f32> {
    let cfg = ModelConfig {
        d_in: 24,
        d_h: 32,
        gcn_layers: 2,
        gru_layers: 2,
        max_doc_len: 512,
        dropout_embed: 0.1,
        dropout_gcn: 0.5,
        bn_momentum: 0.9,
    };
    let vocab = Vocab::build(dataset.docs.iter().map(|d| d.doc.stems.as_slice()));
    ModelState::init(cfg, vocab, 3)
}

fn bench_graph_build(c: &mut Criterion) {
    let docs = synthetic_docs(64, 120, 50);
    let mut group = c.benchmark_group("graph_build_64_docs");
    group.bench_function("parallel", |b| {
        b.iter(|| par_map(&docs, build_graph_from_doc))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| seq_map(&docs, build_graph_from_doc))
    });
    group.finish();
}

fn bench_batch_gradients(c: &mut Criterion) {
    let dataset = synthetic_dataset(16);
    let model = small_model(&dataset);
    let mut group = c.benchmark_group("batch_gradients_16_docs");
    group.sample_size(10);
    let work = |doc: &keygraph::corpus::IngestedDoc| {
        doc_pass(&model, &doc.graph, &doc.gold_nodes, Phase::Train, 1, true).unwrap()
    };
    group.bench_function("parallel", |b| b.iter(|| par_map(&dataset.docs, work)));
    group.bench_function("sequential", |b| b.iter(|| seq_map(&dataset.docs, work)));
    group.finish();
}

fn bench_extraction(c: &mut Criterion) {
    let dataset = synthetic_dataset(12);
    let model = small_model(&dataset);
    let cfg = ExtractionConfig {
        beam_width: 16,
        max_depth: 3,
        top_m: 5,
        ..Default::default()
    };
    let mut group = c.benchmark_group("extract_12_docs");
    group.sample_size(10);
    let work = |doc: &keygraph::corpus::IngestedDoc| {
        extract_keyphrases(&model, &doc.doc, &doc.graph, &cfg).unwrap()
    };
    group.bench_function("parallel", |b| b.iter(|| par_map(&dataset.docs, work)));
    group.bench_function("sequential", |b| b.iter(|| seq_map(&dataset.docs, work)));
    group.finish();
}

criterion_group!(
    benches,
    bench_graph_build,
    bench_batch_gradients,
    bench_extraction
);
criterion_main!(benches);
