use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semshift::embed::{cosine_cost_with, EmbeddingMatrix};
use semshift::eval::{run_repeated_with, EvalConfig, Task};
use semshift::ingest::{assemble_word_dataset, WordDataset};
use semshift::pipeline::{process_words, PipelineConfig};
use semshift::synth::{generate, SynthConfig};
use semshift::Execution;

const MODES: [(&str, Execution); 2] = [("serial", Execution::Serial), ("parallel", Execution::Parallel)];

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dims: usize, tag: &str) -> EmbeddingMatrix {
    let data: Vec<Vec<f64>> = (0..rows).map(|_| (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    EmbeddingMatrix::from_rows(&data, (0..rows).map(|i| format!("{tag}{i}")).collect()).unwrap()
}

fn cost_matrix(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_matrix(&mut rng, 400, 768, "u");
    let v = random_matrix(&mut rng, 400, 768, "v");
    let mut group = c.benchmark_group("cosine_cost_400x400x768");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| cosine_cost_with(&u, &v, exec).unwrap()));
    }
    group.finish();
}

fn small_corpus() -> (semshift::synth::SynthCorpus, Vec<WordDataset>) {
    let corpus = generate(&SynthConfig {
        words: 8,
        per_period: 40,
        ..Default::default()
    })
    .unwrap();
    let ds = corpus
        .words
        .iter()
        .map(|w| assemble_word_dataset(&corpus.instances, &w.word).unwrap())
        .collect();
    (corpus, ds)
}

fn pipeline(c: &mut Criterion) {
    let (corpus, ds) = small_corpus();
    let mut group = c.benchmark_group("process_words_8x40");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = PipelineConfig {
            lambda_grid: vec![10.0, 100.0, 1000.0],
            damping_grid: vec![0.7, 0.9],
            exec,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| process_words(&ds, &corpus.embeddings, &cfg, None))
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let (corpus, ds) = small_corpus();
    let cfg = PipelineConfig {
        lambda_grid: vec![10.0, 100.0, 1000.0],
        damping_grid: vec![0.7, 0.9],
        ..Default::default()
    };
    let data: Vec<_> = process_words(&ds, &corpus.embeddings, &cfg, None)
        .into_iter()
        .zip(&ds)
        .zip(&corpus.words)
        .map(|((a, d), w)| a.unwrap().to_eval_data(d, Some(w.changed)).unwrap())
        .collect();
    let ec = EvalConfig {
        lambda_grid: vec![10.0, 100.0, 1000.0],
        lambda_r_grid: vec![10.0, 100.0],
        damping_grid: vec![0.7, 0.9],
        split_ratio: 0.5,
        repetitions: 50,
        ..Default::default()
    };
    let mut group = c.benchmark_group("run_repeated_instance_sus");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_repeated_with(&data, Task::Instance, "sus", &ec, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, cost_matrix, pipeline, evaluation);
criterion_main!(benches);
