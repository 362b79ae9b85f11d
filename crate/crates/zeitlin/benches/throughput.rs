//! Criterion benchmarks over the data-parallel core: exact kernel builds,
//! whole-band difference sweeps, closed-form remainder sums, and ensemble
//! sampling. Benchmark ids are identical under both feature modes, so a
//! parallel/sequential comparison is two runs:
//!
//!   cargo bench --bench throughput -- --save-baseline parallel
//!   cargo bench --bench throughput --no-default-features -- --baseline parallel

use criterion::{criterion_group, BenchmarkId, Criterion};
use zeitlin::measures::sample_mu;
use zeitlin::remainder::{torus_expected_remainder_sq, RemainderCoeffs};
use zeitlin::structconst::{diff_bound_check, BracketScale};
use zeitlin::HalfInt;

/// Which code path this binary was compiled against.
const MODE: &str = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };

fn bench_three_j_sweep(c: &mut Criterion) {
    // Scalar kernel baseline, unaffected by the feature mode.
    c.bench_function("three_j_sweep_j20", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for m in -10..=10 {
                acc += zeitlin::wigner::three_j(
                    HalfInt::from_int(10),
                    HalfInt::from_int(10),
                    HalfInt::from_int(15),
                    HalfInt::from_int(m),
                    HalfInt::from_int(-m),
                    HalfInt::from_int(0),
                )
                .unwrap();
            }
            std::hint::black_box(acc)
        })
    });
}

fn bench_kernel_build(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_build");
    group.sample_size(10);
    for n in [9u32, 17] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| RemainderCoeffs::build(n, BracketScale::N32).unwrap())
        });
    }
    group.finish();
}

fn bench_difference_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("difference_sweep");
    group.sample_size(10);
    for n in [9u32, 17] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| diff_bound_check(n, BracketScale::N32))
        });
    }
    group.finish();
}

fn bench_remainder_sums(c: &mut Criterion) {
    let kernel = RemainderCoeffs::build(17, BracketScale::N32).unwrap();
    c.bench_function("wick_sum_n17", |b| {
        b.iter(|| kernel.expected_remainder_sq(4.0).unwrap())
    });
    c.bench_function("torus_sum_n33", |b| {
        b.iter(|| torus_expected_remainder_sq(33, 5.0).unwrap())
    });
}

fn bench_sampling(c: &mut Criterion) {
    c.bench_function("sample_mu_n9_2000", |b| b.iter(|| sample_mu(9, 2000, 1)));
    let kernel = RemainderCoeffs::build(5, BracketScale::N32).unwrap();
    c.bench_function("remainder_mc_n5_1000", |b| {
        b.iter(|| kernel.mc_remainder_sq(4.0, 1000, 1).unwrap())
    });
}

criterion_group!(
    benches,
    bench_three_j_sweep,
    bench_kernel_build,
    bench_difference_sweep,
    bench_remainder_sums,
    bench_sampling
);

fn main() {
    eprintln!("throughput bench compiled for the {MODE} code path");
    benches();
    Criterion::default().configure_from_args().final_summary();
}
