use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rbsde_core::{solve_direct_reflected, solve_penalized, Engine, Lattice, McEngine, Scenario};
use std::hint::black_box;

const REFLECTED: &str = r#"{
  "n": 1, "d": 1, "T": 1.0, "steps": 200,
  "generator": { "family": "linear_quadratic", "gamma": [1.0] },
  "barrier": { "family": "clamped_affine", "alpha": [-0.2], "beta": [[1.0]], "cap": [0.5], "s_plus_max": 0.5 },
  "terminal": { "family": "clamped_affine", "alpha": [0.0], "beta": [[1.0]], "xi_max": 1.0 },
  "penalty_schedule": { "k0": 1.0, "rho": 2.0, "count": 13 }
}"#;

fn scenario(steps: usize) -> Scenario {
    let mut s: Scenario = serde_json::from_str(REFLECTED).unwrap();
    s.steps = steps;
    s
}

fn lattice(c: &mut Criterion) {
    let mut group = c.benchmark_group("lattice");
    for steps in [100, 200, 400] {
        let s = scenario(steps);
        let lat = Lattice::build(1, 1.0, steps, 1 << 24).unwrap();
        group.bench_with_input(BenchmarkId::new("penalized_k1024", steps), &steps, |b, _| {
            b.iter(|| solve_penalized(black_box(&s), 1024.0, &lat).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("direct", steps), &steps, |b, _| {
            b.iter(|| solve_direct_reflected(black_box(&s), &lat).unwrap())
        });
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("mc");
    group.sample_size(10);
    for paths in [5_000, 20_000] {
        let mc = McEngine::simulate(1, paths, 50, 1, 1.0, 3).unwrap();
        let values: Vec<f64> = (0..paths).map(|p| (p as f64 * 0.37).sin()).collect();
        group.bench_with_input(BenchmarkId::new("cond_exp_z", paths), &paths, |b, _| {
            b.iter(|| mc.cond_exp_z(25, black_box(&values), 1).unwrap())
        });
        let s = scenario(50);
        group.bench_with_input(BenchmarkId::new("penalized_k64", paths), &paths, |b, _| {
            b.iter(|| solve_penalized(black_box(&s), 64.0, &mc).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, lattice, monte_carlo);
criterion_main!(benches);
