use criterion::{black_box, criterion_group, criterion_main, Criterion};
use hstab_core::{count_unstable, eval_char, run_simulation, solve_kernels, SimConfig, SystemParams};
use num_complex::Complex64;

fn params(k: f64, length: f64) -> SystemParams {
    SystemParams::new(1.0, 1.0, 1.0, length, k).unwrap()
}

fn char_eval(c: &mut Criterion) {
    let p = params(0.5, 2.0);
    let s = Complex64::new(0.3, 7.0);
    c.bench_function("eval_char", |b| b.iter(|| eval_char(black_box(&p), black_box(s)).unwrap()));
}

fn winding(c: &mut Criterion) {
    let p = params(0.5, 2.0);
    c.bench_function("count_unstable", |b| b.iter(|| count_unstable(black_box(&p), None).unwrap()));
}

fn simulate(c: &mut Criterion) {
    let cfg = SimConfig::new(params(0.0, 1.0), 100, 30.0);
    c.bench_function("run_simulation N=100 T=30", |b| b.iter(|| run_simulation(black_box(&cfg)).unwrap()));
}

fn kernels(c: &mut Criterion) {
    let p = params(0.0, 4.0);
    let mut group = c.benchmark_group("solve_kernels");
    group.sample_size(10);
    for mesh in [32, 128] {
        group.bench_function(format!("mesh {mesh}"), |b| b.iter(|| solve_kernels(black_box(&p), mesh).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, char_eval, winding, simulate, kernels);
criterion_main!(benches);
