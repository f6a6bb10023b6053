use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mgtraj::par::Exec;
use mgtraj::sampling::{predict, Strategy};
use mgtraj::train::checks::synthetic_samples;
use mgtraj::train::{TrainConfig, Trainer};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn train_batch(c: &mut Criterion) {
    let samples = synthetic_samples(64, 3).unwrap();
    let cfg = TrainConfig {
        batch_size: 64,
        ..Default::default()
    };
    let idx: Vec<usize> = (0..64).collect();
    let mut group = c.benchmark_group("train_batch");
    group.sample_size(10);
    for (name, exec) in EXECS {
        let mut trainer = Trainer::new(&cfg, samples.clone(), exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trainer.train_batch(&idx).unwrap())
        });
    }
    group.finish();
}

fn predict_k20(c: &mut Criterion) {
    let samples = synthetic_samples(32, 5).unwrap();
    let trainer = Trainer::new(&TrainConfig::default(), samples.clone(), Exec::Sequential).unwrap();
    let mut group = c.benchmark_group("predict_k20");
    group.sample_size(10);
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| predict(&trainer.model, &samples, 20, Strategy::Expectation, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, train_batch, predict_k20);
criterion_main!(benches);
