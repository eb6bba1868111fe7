use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::Rng;
use ventrate_bench::dense_stream;
use ventrate_core::assignment::{solve, solve_gated};
use ventrate_core::seed;
use ventrate_core::tracker::{filter_frame, track_detections, Tracker};
use ventrate_core::ventilation::estimate_tracks;
use ventrate_core::TrackerConfig;

fn tracking(c: &mut Criterion) {
    let (_, frames) = dense_stream(300, 11);
    let mut g = c.benchmark_group("tracking");
    g.throughput(Throughput::Elements(frames.len() as u64));
    g.sample_size(20);
    g.bench_function("step_300_frames", |b| {
        b.iter(|| {
            let mut t = Tracker::new(TrackerConfig::default()).unwrap();
            for f in &frames {
                t.step(&filter_frame(f)).unwrap();
            }
            black_box(t.finish())
        })
    });
    g.finish();
}

fn estimation(c: &mut Criterion) {
    let (fps, frames) = dense_stream(300, 12);
    let tracks = track_detections(TrackerConfig::default(), &frames).unwrap();
    let mut g = c.benchmark_group("estimation");
    g.throughput(Throughput::Elements(tracks.len() as u64));
    g.bench_function("estimate_tracks", |b| b.iter(|| black_box(estimate_tracks(&tracks, fps, 7))));
    g.finish();
}

fn assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("assignment");
    for n in [10usize, 50, 100] {
        let mut rng = seed::rng(n as u64);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..1.0)).collect();
        g.bench_with_input(BenchmarkId::new("solve", n), &cost, |b, cost| b.iter(|| black_box(solve(cost, n, n))));
        g.bench_with_input(BenchmarkId::new("solve_gated", n), &cost, |b, cost| {
            b.iter(|| black_box(solve_gated(cost, n, n, 0.3)))
        });
    }
    g.finish();
}

criterion_group!(benches, tracking, estimation, assignment);
criterion_main!(benches);
