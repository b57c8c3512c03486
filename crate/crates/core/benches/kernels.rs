//! Single-thread pool against the full rayon pool for the hot kernels.
//! Build with `--no-default-features` to measure the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hybridhash::config::RunConfig;
use hybridhash::data::generate_splits;
use hybridhash::pipeline::Trainer;
use hybridhash::retrieval::{run_retrieval, CodeDatabase, HashCode};
use hybridhash::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::{ThreadPool, ThreadPoolBuilder};

fn pools() -> Vec<(String, ThreadPool)> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut sizes = vec![1];
    if n > 1 {
        sizes.push(n);
    }
    sizes
        .into_iter()
        .map(|t| (format!("{t}-thread"), ThreadPoolBuilder::new().num_threads(t).build().unwrap()))
        .collect()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::<f32>::randn(&[16, 64, 64], 1.0, &mut rng);
    let b = Tensor::<f32>::randn(&[16, 64, 64], 1.0, &mut rng);
    let mut group = c.benchmark_group("matmul_16x64x64");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                pool.install(|| {
                    let tape = Tape::new();
                    let y = tape.constant(a.clone()).matmul(tape.constant(b.clone())).unwrap();
                    let out = y.value().clone();
                    out
                })
            })
        });
    }
    group.finish();
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f32>::randn(&[8, 16, 16, 32], 1.0, &mut rng);
    let w = Tensor::<f32>::randn(&[3, 3, 32, 64], 0.1, &mut rng);
    let bias = Tensor::<f32>::zeros(&[64]);
    let mut group = c.benchmark_group("conv3x3_8x16x16x32");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                pool.install(|| {
                    let tape = Tape::new();
                    let (wv, bv) = (tape.param(w.clone()), tape.param(bias.clone()));
                    let y = tape.constant(x.clone()).conv2d(wv, bv, 1, 1).unwrap();
                    tape.backward(y.sum()).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let data = generate_splits(3, 20, 32, 3).unwrap();
    let mut cfg = RunConfig::default();
    cfg.training.batch_size = 16;
    let mut group = c.benchmark_group("desk_train_step_b16");
    group.sample_size(10);
    for (name, pool) in pools() {
        let mut trainer = Trainer::new(&cfg, &data.train).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| pool.install(|| trainer.step().unwrap()))
        });
    }
    group.finish();
}

fn retrieval(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut db = |n: usize| {
        let labels = (0..n).map(|i| 1u64 << (i % 10)).collect();
        let codes = (0..n)
            .map(|_| HashCode::from_words(64, vec![rng.random()]).unwrap())
            .collect();
        CodeDatabase::sequential(64, labels, codes).unwrap()
    };
    let (queries, database) = (db(200), db(20_000));
    let mut group = c.benchmark_group("retrieval_200q_20000db_k1000");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| pool.install(|| run_retrieval(&queries, &database, 1000).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, conv, train_step, retrieval);
criterion_main!(benches);
