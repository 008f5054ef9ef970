// Serial against rayon execution for the three data-parallel hot spots:
// trajectory sampling, the CRPS table and row-blocked matrix products.
// Build with `--no-default-features` to see the parallel arm fall back.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use flowcast::data::{pipes_dataset, PipesConfig};
use flowcast::forecaster::{
    predict, train, ForecastSamples, Model, ModelConfig, ModelKind, ScaleVector, TrainConfig,
};
use flowcast::metrics::crps_table;
use flowcast::par::{self, Execution};
use flowcast::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [
    ("serial", Execution::Serial),
    ("parallel", Execution::Parallel),
];

fn sampling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = pipes_dataset(300, &PipesConfig::default(), &mut rng).unwrap();
    let mut config = ModelConfig::for_dataset(ModelKind::RnnRealNvp, &ds);
    config.flow_blocks = 3;
    config.flow_hidden = 32;
    config.rnn_hidden = 24;
    config.rnn_layers = 1;
    let mut model = Model::new(config, ScaleVector::fit(&ds), 1).unwrap();
    // One short epoch records batch-norm statistics and leaves inference mode on.
    let tc = TrainConfig {
        epochs: 1,
        batches_per_epoch: 2,
        batch_size: 8,
        window: 24,
        ..TrainConfig::default()
    };
    train(&mut model, &ds, &tc, |_, _| {}).unwrap();
    let mut group = c.benchmark_group("predict_64x12");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| predict(&model, &ds, 12, 64, 3, exec).unwrap())
        });
    }
    group.finish();
}

fn crps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (s, h, d) = (200, 24, 64);
    let paths = ForecastSamples::new(
        s,
        h,
        d,
        (0..s * h * d)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap();
    let actuals = Tensor::matrix(
        h,
        d,
        (0..h * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let mut group = c.benchmark_group("crps_table_200x24x64");
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| crps_table(black_box(&paths), &actuals, exec).unwrap())
        });
    }
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut group = c.benchmark_group("matmul_rows");
    for n in [64usize, 256] {
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; n * n];
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |bench, &n| {
                bench.iter(|| {
                    par::rows_mut(&mut out, n, exec.is_parallel(), |i, row| {
                        row.fill(0.0);
                        for (p, &av) in a[i * n..(i + 1) * n].iter().enumerate() {
                            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                                *o += av * bv;
                            }
                        }
                    });
                    black_box(&out);
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, sampling, crps, matmul);
criterion_main!(benches);
