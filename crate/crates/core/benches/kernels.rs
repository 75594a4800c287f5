//! Kernel throughput on one worker versus the full pool.
//!
//! `cargo bench -p volnas --no-default-features` measures the sequential
//! build instead; there both variants run the same code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volnas::par;
use volnas::searchspace::{build_schema, TaskStats};
use volnas::supernet::{ArchRealization, SupernetConfig, SupernetWeights};
use volnas::tensor::{Shape5, Tape, Tensor5};

fn random(shape: Shape5, rng: &mut ChaCha8Rng) -> Tensor5<f32> {
    Tensor5::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn variants() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("pool", pool_threads())]
}

fn pool_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(Shape5::new(2, 8, 16, 32, 32), &mut rng);
    let k = random(Shape5::new(8, 8, 3, 3, 3), &mut rng);
    let mut group = c.benchmark_group("conv3d_8x16x32x32");
    for (name, threads) in variants() {
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    let mut t = Tape::new();
                    let (xv, kv) = (t.constant(x.clone()), t.constant(k.clone()));
                    t.conv3d(xv, kv, None, [1, 2, 2]).unwrap()
                })
            })
        });
        group.bench_function(BenchmarkId::new("forward_backward", name), |b| {
            b.iter(|| {
                par::with_threads(threads, || {
                    let mut t = Tape::new();
                    let (xv, kv) = (t.param(x.clone()), t.param(k.clone()));
                    let y = t.conv3d(xv, kv, None, [1, 2, 2]).unwrap();
                    let s = t.sum(y);
                    t.backward(s).unwrap()
                })
            })
        });
    }
    group.finish();
}

fn supernet(c: &mut Criterion) {
    let schema = build_schema(&TaskStats::uniform(16, 32, 32, 1, 1)).unwrap();
    let cfg = SupernetConfig {
        base_channels: 4,
        in_channels: 1,
        out_channels: 1,
    };
    let weights = SupernetWeights::<f32>::build(cfg, &schema, 1).unwrap();
    let arch = ArchRealization::from_choice(&schema, &schema.max_architecture()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = random(Shape5::new(1, 1, 16, 32, 32), &mut rng);
    let mut group = c.benchmark_group("supernet_16x32x32");
    group.sample_size(10);
    for (name, threads) in variants() {
        group.bench_function(BenchmarkId::new("infer", name), |b| {
            b.iter(|| par::with_threads(threads, || weights.infer(&arch, image.clone()).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, supernet);
criterion_main!(benches);
