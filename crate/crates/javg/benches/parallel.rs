//! Parallel vs sequential throughput on the data-parallel hot paths.

use criterion::{criterion_group, criterion_main, Criterion};

use javg::exec::{map_indexed, ExecMode};

fn bench_map(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_indexed");
    for mode in [ExecMode::Sequential, ExecMode::Parallel] {
        group.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| {
                map_indexed(mode, 64, |i| {
                    let mut acc = 0.0f64;
                    for k in 0..1000 {
                        acc += ((i * 31 + k) as f64).sin();
                    }
                    acc
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_map);
criterion_main!(benches);
