use criterion::{black_box, criterion_group, criterion_main, Criterion};

use cotsrf_core::collect::CorpusRole;
use cotsrf_core::corpus::{build_query_set, synthetic_questions, DEFAULT_COT_PROMPT};
use cotsrf_core::divergence::kl_from_samples;
use cotsrf_core::encoder::{batch_gradient, EncoderParams, Featurizer};
use cotsrf_core::stylesim::{default_profile, SimEndpoint};

fn texts() -> Vec<String> {
    let qs = build_query_set(&synthetic_questions(32, 1), DEFAULT_COT_PROMPT, 32, 1).unwrap();
    let sim = SimEndpoint::new(default_profile("aurora").unwrap(), 1.5).unwrap();
    sim.simulate_corpus(&qs, CorpusRole::Source, 3)
        .records
        .into_iter()
        .map(|r| r.text)
        .collect()
}

fn encoder(c: &mut Criterion) {
    let texts = texts();
    let f = Featurizer::default();
    let params = EncoderParams::init(f, 256, 64, 0);
    c.bench_function("featurize", |b| b.iter(|| f.featurize(black_box(&texts[0])).unwrap()));
    c.bench_function("embed", |b| b.iter(|| params.embed(black_box(&texts[0])).unwrap()));
    let batch: Vec<_> = texts
        .chunks(3)
        .map(|t| (f.featurize(&t[0]).unwrap(), f.featurize(&t[1]).unwrap(), f.featurize(&t[2]).unwrap()))
        .collect();
    c.bench_function("batch_gradient_32", |b| b.iter(|| batch_gradient(&params, black_box(&batch), 5.0).unwrap()));
}

fn divergence(c: &mut Criterion) {
    let a: Vec<f64> = (0..50).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..50).map(|i| 2.0 + (i as f64 * 0.91).cos()).collect();
    c.bench_function("kl_50x50", |bch| bch.iter(|| kl_from_samples(black_box(&a), black_box(&b)).unwrap()));
}

fn simulator(c: &mut Criterion) {
    let qs = build_query_set(&synthetic_questions(50, 2), DEFAULT_COT_PROMPT, 50, 2).unwrap();
    let sim = SimEndpoint::new(default_profile("basalt").unwrap(), 1.0).unwrap();
    c.bench_function("simulate_50x1", |b| b.iter(|| sim.simulate_corpus(black_box(&qs), CorpusRole::Suspect, 1)));
}

criterion_group!(benches, encoder, divergence, simulator);
criterion_main!(benches);
