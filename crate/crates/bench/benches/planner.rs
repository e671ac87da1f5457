use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use seqpipe_bench::{gpt7b_cluster, gpt7b_layout, SEQ_512K};
use seqpipe_core::partition::{oracle_min_max_flops, partition_flops_balanced};
use seqpipe_core::solver::{evaluate_config, run_config};
use seqpipe_core::{solve_with, ModelSpec, SimOptions, SolverOptions};

fn partition(c: &mut Criterion) {
    let (model, _) = gpt7b_cluster();
    let mut g = c.benchmark_group("partition");
    for n in [8, 32, 128] {
        g.bench_with_input(BenchmarkId::new("balanced_512k", n), &n, |b, &n| {
            b.iter(|| partition_flops_balanced(&model, black_box(SEQ_512K), n).unwrap())
        });
    }
    let small = ModelSpec::new(4, 256, 4);
    g.bench_function("oracle_4096_8", |b| {
        b.iter(|| oracle_min_max_flops(&small, black_box(4096), 8).unwrap())
    });
    g.finish();
}

fn simulate(c: &mut Criterion) {
    let (model, hw) = gpt7b_cluster();
    let sim = SimOptions::default();
    let mut g = c.benchmark_group("simulate");
    for n in [16, 32, 64] {
        let cfg = gpt7b_layout(n);
        g.bench_with_input(BenchmarkId::new("report_only", n), &cfg, |b, cfg| {
            b.iter(|| evaluate_config(&model, &hw, SEQ_512K, cfg, 1, &sim).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("with_events", n), &cfg, |b, cfg| {
            b.iter(|| run_config(&model, &hw, SEQ_512K, cfg, 1, &sim).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let (model, hw) = gpt7b_cluster();
    let opts = SolverOptions::default();
    let sim = SimOptions::default();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("gpt7b_512k", |b| {
        b.iter(|| solve_with(&model, &hw, black_box(SEQ_512K), &opts, &sim).unwrap())
    });
    g.finish();
}

criterion_group!(benches, partition, simulate, solve);
criterion_main!(benches);
