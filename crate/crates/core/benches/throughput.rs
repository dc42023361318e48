use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::{Array2, Array3};

use geomimu::exec::Execution;
use geomimu::fixtures;
use geomimu::imu_sim::{simulate_placements, MountRanges, SimulationConfig};
use geomimu::objectives::LatentSequence;
use geomimu::placement::enumerate_placements_with;
use geomimu::sampler::{generate_pairs, CandidatePool, ViewConfig};
use geomimu::tokenizer::{quantize_batch, Codebooks};

fn paths() -> Vec<(&'static str, Execution)> {
    let mut out = vec![("sequential", Execution::Sequential)];
    if cfg!(feature = "parallel") {
        out.push(("parallel", Execution::Parallel));
    }
    out
}

fn throughput(c: &mut Criterion) {
    let body = fixtures::xsens_skeleton_body();
    let motion = fixtures::xsens_motion(60.0, 600);
    let set = enumerate_placements_with(&body, &motion, Execution::Sequential).unwrap();

    let mut group = c.benchmark_group("placements");
    group.sample_size(10);
    for (name, exec) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| enumerate_placements_with(black_box(&body), &motion, exec).unwrap())
        });
    }
    group.finish();

    let mut cfg = SimulationConfig::new(1);
    cfg.mount_ranges = MountRanges::training();
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for (name, exec) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| simulate_placements(&motion, black_box(&set.candidates), &cfg, exec).unwrap())
        });
    }
    group.finish();

    let pool = CandidatePool::new(&set, body.segment_count(), false);
    let view_cfg = ViewConfig::default();
    let mut group = c.benchmark_group("views");
    group.sample_size(10);
    for (name, exec) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                generate_pairs(&motion, &pool, &view_cfg, 300, 150, black_box(32), 7, exec).unwrap()
            })
        });
    }
    group.finish();

    let books = Codebooks::from_codes(
        Array3::from_shape_fn((2, 2048, 64), |(p, k, d)| {
            ((p * 7 + k * 13 + d * 3) % 101) as f64 / 50.0 - 1.0
        }),
        0.99,
    )
    .unwrap();
    let latents: Vec<LatentSequence> = (0..64)
        .map(|n| {
            LatentSequence::new(Array2::from_shape_fn((75, 128), |(l, d)| {
                ((n * 31 + l * 17 + d * 5) % 97) as f64 / 48.0 - 1.0
            }))
            .unwrap()
        })
        .collect();
    let mut group = c.benchmark_group("quantize");
    group.sample_size(10);
    for (name, exec) in paths() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| quantize_batch(black_box(&latents), &books, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, throughput);
criterion_main!(benches);
