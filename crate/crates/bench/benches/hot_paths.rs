//! Hot-path benchmarks: dense matmul, one LSTM cell step, and the TF-IDF
//! cosine prior. These dominate training and decoding time respectively.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use icdseq::datasynth::{generate_dictionary, SynthConfig};
use icdseq::model::{lstm_step, LstmCellParams};
use icdseq::prior::{build_code_documents, fit_tfidf};
use icdseq::tensor::matmul;
use icdseq::{Rng, Tensor};

fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.fill_uniform(rng, -1.0, 1.0);
    t
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let a = random_tensor(&[64, 64], &mut rng);
    let b = random_tensor(&[64, 64], &mut rng);
    c.bench_function("matmul_64x64", |bench| {
        bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_lstm_step(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let params = LstmCellParams::init(64, 128, &mut rng);
    let x = random_tensor(&[64], &mut rng);
    let h = random_tensor(&[128], &mut rng);
    let cell = random_tensor(&[128], &mut rng);
    c.bench_function("lstm_step_64_to_128", |bench| {
        bench.iter(|| lstm_step(black_box(&x), black_box(&h), black_box(&cell), &params).unwrap())
    });
}

fn bench_cosine_vector(c: &mut Criterion) {
    let cfg = SynthConfig::table2_mini(3);
    let (entries, _) = generate_dictionary(&cfg);
    let index = fit_tfidf(&build_code_documents(&entries));
    let query = "cardive sonoma failure, renitis pulmex disease";
    c.bench_function("cosine_vector_60_codes", |bench| {
        bench.iter(|| index.cosine_vector(black_box(query)))
    });
}

criterion_group!(benches, bench_matmul, bench_lstm_step, bench_cosine_vector);
criterion_main!(benches);
