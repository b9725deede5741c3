use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lidarsr::baselines::Interpolation;
use lidarsr::data::{samples, simulate_frames, Sample};
use lidarsr::evaluate::{evaluate, Candidate};
use lidarsr::nets::{Upsampler, UpsamplerConfig};
use lidarsr::sim::default_geometry;
use lidarsr::tensor::kernels::{conv2d_forward, ConvGeom};
use lidarsr::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Thread counts to compare. A sequential build has only one.
fn thread_counts() -> Vec<usize> {
    if !lidarsr::par::is_parallel() {
        return vec![1];
    }
    let max = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1, max];
    counts.dedup();
    counts
}

fn label(threads: usize) -> String {
    if lidarsr::par::is_parallel() {
        format!("rayon-{threads}")
    } else {
        "sequential".into()
    }
}

/// Thread pool of the given size when the rayon backend is on.
#[cfg(feature = "parallel")]
struct Pool(rayon::ThreadPool);
#[cfg(not(feature = "parallel"))]
struct Pool;

impl Pool {
    fn new(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            Pool(rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap())
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Pool
        }
    }

    fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            self.0.install(f)
        }
        #[cfg(not(feature = "parallel"))]
        {
            f()
        }
    }
}

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn bench_conv(c: &mut Criterion) {
    let (n, ch, o) = (8, 16, 16);
    let g = ConvGeom::new(ch, (32, 128), (3, 3), (1, 1), (1, 1)).unwrap();
    let x = random(n * ch * 32 * 128, 1);
    let k = random(o * ch * 9, 2);
    let mut group = c.benchmark_group("conv2d_3x3_16ch_8x32x128");
    for t in thread_counts() {
        let pool = Pool::new(t);
        group.bench_function(BenchmarkId::from_parameter(label(t)), |b| {
            b.iter(|| pool.run(|| black_box(conv2d_forward(&x, n, &g, &k, o, None))))
        });
    }
    group.finish();
}

fn bench_infer(c: &mut Criterion) {
    let net = Upsampler::build(UpsamplerConfig::small(2, 16), 0).unwrap();
    let x = Tensor::new(vec![4, 1, 16, 128], random(4 * 16 * 128, 3).iter().map(|v| 20.0 + 10.0 * v).collect())
        .unwrap();
    let mut group = c.benchmark_group("upsampler_infer_4x16x128");
    group.sample_size(10);
    for t in thread_counts() {
        let pool = Pool::new(t);
        group.bench_function(BenchmarkId::from_parameter(label(t)), |b| {
            b.iter(|| pool.run(|| black_box(net.infer(&x).unwrap())))
        });
    }
    group.finish();
}

fn bench_simulate(c: &mut Criterion) {
    let g = Arc::new(default_geometry());
    let mut group = c.benchmark_group("simulate_8_frames");
    group.sample_size(10);
    for t in thread_counts() {
        let pool = Pool::new(t);
        group.bench_function(BenchmarkId::from_parameter(label(t)), |b| {
            b.iter(|| pool.run(|| black_box(simulate_frames(0..8, &g).unwrap())))
        });
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let g = Arc::new(default_geometry());
    let test: Vec<Sample> = samples(&simulate_frames(0..32, &g).unwrap()).unwrap();
    let mut group = c.benchmark_group("evaluate_bicubic_32_frames");
    for t in thread_counts() {
        let pool = Pool::new(t);
        group.bench_function(BenchmarkId::from_parameter(label(t)), |b| {
            b.iter(|| {
                pool.run(|| {
                    black_box(evaluate(&test, Candidate::Interpolation(Interpolation::Bicubic), None).unwrap())
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_infer, bench_simulate, bench_evaluate);
criterion_main!(benches);
