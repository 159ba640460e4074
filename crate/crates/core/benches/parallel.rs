//! One worker versus the default rayon pool on the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use redi_core::autodiff::Graph;
use redi_core::descriptors::{render_hog_image, HogConfig};
use redi_core::discriminate::Backbone;
use redi_core::par;
use redi_core::rng::SplitMix64;
use redi_core::Tensor;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let label = format!("threads={}", default.current_num_threads());
    vec![
        ("threads=1".into(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (label, default),
    ]
}

fn images(n: usize, size: usize) -> Tensor {
    let mut rng = SplitMix64::new(1);
    Tensor::from_fn([n, 1, size, size], |_, _, _, _| rng.next_f32())
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_forward_backward");
    let mut rng = SplitMix64::new(2);
    let x = images(16, 64);
    let k = Tensor::from_fn([16, 1, 3, 3], |_, _, _, _| rng.uniform(-0.3, 0.3));
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| {
                pool.install(|| {
                    let mut g = Graph::new();
                    let (xn, kn) = (g.constant(x.clone()), g.param(k.clone()));
                    let y = g.conv2d(xn, kn, 1, 1).unwrap();
                    let l = g.mean(y);
                    g.backward(l).unwrap();
                })
            })
        });
    }
    group.finish();
}

fn extract(c: &mut Criterion) {
    let mut group = c.benchmark_group("backbone_extract");
    let backbone = Backbone::seeded(3, 16);
    let x = images(32, 64);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| backbone.extract(&x).unwrap()))
        });
    }
    group.finish();
}

fn hog_batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("hog_render_batch");
    let x = images(64, 64);
    let singles: Vec<Tensor> = (0..64).map(|i| x.batch_slice(i, 1)).collect();
    let cfg = HogConfig::default();
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| par::map_indexed(singles.len(), |i| render_hog_image(&singles[i], &cfg).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, extract, hog_batch);
criterion_main!(benches);
