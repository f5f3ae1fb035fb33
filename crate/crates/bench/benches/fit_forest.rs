use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use fedsurf_core::{fit_forest, synth_survival, RsfParams};

/// Forest training across dataset sizes. The interesting read-out is how
/// the wall time scales with N: the incremental log-rank scan keeps the
/// doubling ratio well under the naive O(N²·log N) jump.
fn bench_fit_forest(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_forest");
    group.sample_size(10);
    for n in [250usize, 500, 1000, 2000] {
        let data = synth_survival(n, 10, 0.3, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
        let params = RsfParams::new(20, 7);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| fit_forest(data, &params).unwrap());
        });
    }
    group.finish();
}

/// Depth-1 stumps vs unbounded trees at fixed N.
fn bench_tree_depth(c: &mut Criterion) {
    let data = synth_survival(1000, 10, 0.3, &mut ChaCha12Rng::seed_from_u64(9)).unwrap();
    let mut group = c.benchmark_group("fit_forest_depth");
    group.sample_size(10);
    for depth in [Some(1), None] {
        let mut params = RsfParams::new(20, 7);
        params.max_depth = depth;
        let label = depth.map_or("unbounded".to_string(), |d| d.to_string());
        group.bench_with_input(BenchmarkId::from_parameter(label), &params, |b, params| {
            b.iter(|| fit_forest(&data, params).unwrap());
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit_forest, bench_tree_depth);
criterion_main!(benches);
