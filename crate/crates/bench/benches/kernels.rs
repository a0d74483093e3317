use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dfg_core::metrics::chamfer_l1;
use dfg_core::pipeline::{complete, init_params, ModelConfig, ToyTask};
use dfg_core::sampling::{fps_canonical, knn_self};
use dfg_core::{Point3, PointCloud, Rng};

fn cloud(n: usize, seed: u64) -> PointCloud {
    let mut rng = Rng::new(seed);
    PointCloud::new((0..n).map(|_| Point3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))).collect())
        .unwrap()
}

fn sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sampling");
    for n in [256, 1024] {
        let pc = cloud(n, 1);
        g.bench_with_input(BenchmarkId::new("knn_self_k16", n), &pc, |b, pc| b.iter(|| knn_self(pc, 16).unwrap()));
        g.bench_with_input(BenchmarkId::new("fps_quarter", n), &pc, |b, pc| b.iter(|| fps_canonical(pc, n / 4).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let (a, b) = (cloud(512, 2), cloud(1024, 3));
    c.bench_function("chamfer_l1_512x1024", |bn| bn.iter(|| chamfer_l1(&a, &b).unwrap()));
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let store = init_params(&cfg, 0);
    let mut rng = Rng::new(4);
    let s = ToyTask::SphereMinusCap.sample(&mut rng, 256, 1024);
    let mut g = c.benchmark_group("model");
    g.sample_size(10);
    g.bench_function("complete_256_to_512", |b| b.iter(|| complete(&s.partial, &cfg, &store).unwrap()));
    g.finish();
}

criterion_group!(benches, sampling, metrics, forward);
criterion_main!(benches);
