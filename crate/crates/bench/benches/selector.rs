use criterion::{criterion_group, criterion_main, Criterion};

use cet2_bench::{sentence_pairs, toy_selector};
use cet2_core::evaluation::{bleu, rouge_corpus};
use cet2_core::model::PrevRule;
use cet2_core::nn::Mode;

fn forward(c: &mut Criterion) {
    for m in [8, 32] {
        let (model, samples) = toy_selector(m);
        let prepared: Vec<_> = samples
            .iter()
            .take(4)
            .map(|s| model.prepare(s).unwrap())
            .collect();
        let refs: Vec<_> = prepared.iter().collect();
        c.bench_function(&format!("forward_batch4_m{m}"), |b| {
            b.iter(|| model.forward(&refs, &mut Mode::eval()).unwrap())
        });
    }
    let (model, samples) = toy_selector(8);
    c.bench_function("predict_episodes_m8", |b| {
        b.iter(|| model.predict(&samples, PrevRule::Predicted).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (hyps, refs) = sentence_pairs(1000);
    c.bench_function("bleu2_1000_pairs", |b| {
        b.iter(|| bleu(&hyps, &refs, 2).unwrap())
    });
    c.bench_function("rouge2_1000_pairs", |b| {
        b.iter(|| rouge_corpus(&hyps, &refs, 2).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward, metrics
}
criterion_main!(benches);
