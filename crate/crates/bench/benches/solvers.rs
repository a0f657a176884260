//! Criterion benchmarks for the solver hot paths: dense boundary-value
//! assembly/factorization/solve and the closed-form evaluations.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use qmupl_core::bvp::DiscretizedSystem;
use qmupl_core::closedform::exponential::ExponentialGreen;
use qmupl_core::closedform::white::WhiteGreen;
use qmupl_core::{CorrelationKernel, NoiseGenerator, PhysicalParams, TimeGrid};

const N_STEPS: usize = 400;
const T_FINAL: f64 = 2.0;

fn natural() -> PhysicalParams {
    PhysicalParams::dimensionless(0.25).unwrap()
}

fn bench_bvp(c: &mut Criterion) {
    let p = natural();
    let grid = TimeGrid::new(T_FINAL, N_STEPS).unwrap();
    let kernel = CorrelationKernel::exponential(p.omega()).unwrap();
    let gen = NoiseGenerator::new(&kernel, grid).unwrap();
    let path = gen.sample_indexed(9, 0);

    let mut group = c.benchmark_group("bvp");
    group.sample_size(20);
    group.bench_function("assemble_400", |b| {
        b.iter(|| DiscretizedSystem::assemble(&kernel, grid, &p).unwrap())
    });
    let sys = DiscretizedSystem::assemble(&kernel, grid, &p).unwrap();
    group.bench_function("factorize_400", |b| {
        b.iter_batched(
            || sys.clone(),
            |s| s.factorize().unwrap().condition,
            BatchSize::SmallInput,
        )
    });
    let fac = sys.factorize().unwrap();
    group.bench_function("solve_h_400", |b| b.iter(|| fac.solve_h(&path).unwrap()));
    group.bench_function("prefactor_400", |b| b.iter(|| fac.prefactor_u().unwrap()));
    group.finish();
}

fn bench_closed_form(c: &mut Criterion) {
    let p = natural();
    let grid = TimeGrid::new(T_FINAL, N_STEPS).unwrap();
    let gen = NoiseGenerator::new(&CorrelationKernel::White, grid).unwrap();
    let path = gen.sample_indexed(9, 0);
    let white = WhiteGreen::new(&p).unwrap();
    let exp = ExponentialGreen::new(&p, p.omega()).unwrap();

    let mut group = c.benchmark_group("closed_form");
    group.bench_function("white_coefs_400", |b| b.iter(|| white.coefs(&path)));
    group.bench_function("white_coef_gradients_400", |b| {
        b.iter(|| white.coef_gradients(&path))
    });
    group.bench_function("exponential_f_profile_400", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for k in 0..=N_STEPS {
                acc += exp.f(T_FINAL, grid.node(k)).unwrap().re;
            }
            acc
        })
    });
    group.finish();
}

fn bench_noise(c: &mut Criterion) {
    let grid = TimeGrid::new(T_FINAL, N_STEPS).unwrap();
    let exp = NoiseGenerator::new(
        &CorrelationKernel::exponential(1.0).unwrap(),
        grid,
    )
    .unwrap();

    let mut group = c.benchmark_group("noise");
    group.bench_function("sample_exponential_400", |b| {
        let mut i = 0u64;
        b.iter(|| {
            i += 1;
            exp.sample_indexed(9, i)
        })
    });
    group.finish();
}

criterion_group!(benches, bench_bvp, bench_closed_form, bench_noise);
criterion_main!(benches);
