use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use slidenet::localize::{greedy_merge, MergeConfig};
use slidenet::tensor::{conv2d, Padding};
use slidenet_bench::{merge_boxes, toy, uniform};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    // (in channels, side, out channels, kernel, stride)
    for (ic, side, oc, k, s) in [(1, 54, 6, 7, 1), (6, 24, 16, 7, 1), (64, 28, 128, 3, 1), (3, 115, 96, 7, 2)] {
        let input = uniform(&[ic, side, side], 1);
        let filters = uniform(&[oc, ic, k, k], 2);
        let bias = vec![0.1; oc];
        g.bench_with_input(BenchmarkId::from_parameter(format!("{ic}x{side}x{side}->{oc}@{k}x{k}s{s}")), &(), |b, _| {
            b.iter(|| conv2d(black_box(&input), &filters, &bias, (s, s), Padding::NONE).unwrap())
        });
    }
    g.finish();
}

fn dense_vs_naive(c: &mut Criterion) {
    let mut g = c.benchmark_group("toy_windows");
    g.sample_size(10);
    for side in [42, 54, 78] {
        let t = toy(side);
        g.bench_with_input(BenchmarkId::new("dense", side), &t, |b, t| b.iter(|| t.dense().unwrap()));
        g.bench_with_input(BenchmarkId::new("naive", side), &t, |b, t| b.iter(|| t.naive().unwrap()));
    }
    g.finish();
}

fn merge(c: &mut Criterion) {
    let mut g = c.benchmark_group("greedy_merge");
    let cfg = MergeConfig::new(0.3, 1, 200.0 * 2f64.sqrt()).unwrap();
    for n in [30, 120, 400] {
        let boxes = merge_boxes(n, n as u64);
        g.bench_with_input(BenchmarkId::from_parameter(n), &boxes, |b, boxes| {
            b.iter(|| greedy_merge(black_box(boxes.clone()), &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, dense_vs_naive, merge);
criterion_main!(benches);
