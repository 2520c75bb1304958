use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dbrf_core::data::ColumnKind;
use dbrf_core::model::{dbrf_objective, ArchConfig, Batch, BatchNoise, Hyperparams, ModelParams, TermMask};
use dbrf_core::numeric::Matrix;
use dbrf_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adult-sized inputs: 6 continuous and 29 one-hot columns, two sensitive bits.
fn setup(n: usize) -> (ModelParams, Batch, BatchNoise) {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let kinds: Vec<ColumnKind> = (0..35)
        .map(|j| if j < 6 { ColumnKind::Continuous } else { ColumnKind::OneHot })
        .collect();
    let params = ModelParams::new(&kinds, 2, ArchConfig::default(), &mut r).unwrap();
    let x: Vec<f64> = (0..n * 35)
        .map(|k| if k % 35 < 6 { r.random_range(-2.0..2.0) } else { r.random_range(0..2) as f64 })
        .collect();
    let y = (0..n).map(|_| r.random_range(0..2) as f64).collect();
    let a = (0..n * 2).map(|_| r.random_range(0..2) as f64).collect();
    let batch = Batch::new(
        Matrix::from_vec(n, 35, x).unwrap(),
        y,
        Matrix::from_vec(n, 2, a).unwrap(),
    )
    .unwrap();
    let noise = BatchNoise::sample(&params, n, &mut r);
    (params, batch, noise)
}

fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective_and_gradient");
    for n in [128, 1024] {
        let (params, batch, noise) = setup(n);
        for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| {
                    dbrf_objective(&params, &batch, &noise, &Hyperparams::default(), TermMask::full(), exec, true)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, objective);
criterion_main!(benches);
