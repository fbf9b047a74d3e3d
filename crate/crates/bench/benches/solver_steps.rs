//! Benchmarks for the solver's hot loops: one proximal particle update, one
//! flow-matching gradient step, full trajectory integration under both
//! schemes, exponential-kernel cost construction and evaluation, and the
//! sorted one-dimensional Wasserstein distance.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use nashflow::{
    fm_train, init_trajectories, integrate, sample_initial, w2_1d, Activation, AdamState,
    CouplingSpec, FrozenCosts, InitialDistribution, IntegratorScheme, KernelEvaluator, Mlp,
    ParticleEnsemble, PopulationSnapshot, TimeGrid,
};
use ndarray::{array, Array1};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PARTICLES: usize = 1024;
const TIME_STEPS: usize = 20;

fn standard_cloud(n: usize, seed: u64) -> ndarray::Array2<f64> {
    let dist = InitialDistribution::Gaussian {
        mean: array![0.0, 1.0],
        cov_diag: array![1.0, 1.0],
    };
    sample_initial(&dist, n, seed).expect("sampling a diagonal Gaussian succeeds")
}

fn straight_lines(n: usize, seed: u64) -> ParticleEnsemble {
    let grid = TimeGrid::new(TIME_STEPS).unwrap();
    init_trajectories(standard_cloud(n, seed).view(), grid)
}

fn velocity_net(d: usize) -> Mlp {
    Mlp::new(vec![d + 1, 32, 32, d], Activation::Relu, true, 7).unwrap()
}

fn bench_particle_step(c: &mut Criterion) {
    let ens = straight_lines(PARTICLES, 1);
    let f = CouplingSpec::KernelInteraction {
        lambda: 10.0,
        a: array![0.0, 1.0],
    };
    let g = CouplingSpec::QuadraticTerminal {
        lambda: 1.0,
        center: -1.0,
        coord: 1,
    };
    let costs = FrozenCosts::freeze_self(&f, &g, &ens, None).unwrap();
    let batch: Vec<usize> = (0..PARTICLES).collect();
    c.bench_function("particle_step/kernel_1024x20", |b| {
        b.iter(|| {
            nashflow::particle_step(black_box(&ens), &costs, 0.01, &batch)
                .expect("update stays finite")
        })
    });
}

fn bench_fm_step(c: &mut Criterion) {
    let ens = straight_lines(256, 2);
    let net = velocity_net(2);
    c.bench_function("fm_train/one_step_256x20", |b| {
        b.iter_batched(
            || {
                (
                    net.clone(),
                    AdamState::new(&net, 1e-3).unwrap(),
                    ChaCha8Rng::seed_from_u64(3),
                )
            },
            |(mut net, mut opt, mut rng)| {
                fm_train(&mut net, &mut opt, black_box(&ens), 1, 256, &mut rng)
                    .expect("one flow-matching step succeeds")
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_integrate(c: &mut Criterion) {
    let net = velocity_net(2);
    let x0 = standard_cloud(PARTICLES, 4);
    let grid = TimeGrid::new(TIME_STEPS).unwrap();
    for (name, scheme) in [
        ("integrate/euler_1024x20", IntegratorScheme::Euler),
        ("integrate/rk4_1024x20", IntegratorScheme::Rk4),
    ] {
        c.bench_function(name, |b| {
            b.iter(|| {
                integrate(black_box(&net), x0.view(), grid, scheme)
                    .expect("integration stays finite")
            })
        });
    }
}

fn bench_kernel(c: &mut Criterion) {
    let samples = standard_cloud(2000, 5);
    let snapshot = PopulationSnapshot::new(1, samples.clone()).unwrap();
    let a: Array1<f64> = array![0.0, 1.0];
    c.bench_function("kernel/freeze_2000", |b| {
        b.iter(|| KernelEvaluator::new(10.0, black_box(a.view()), &snapshot).unwrap())
    });
    let eval = KernelEvaluator::new(10.0, a.view(), &snapshot).unwrap();
    c.bench_function("kernel/grad_batch_2000", |b| {
        b.iter(|| eval.grad_batch(black_box(samples.view())).unwrap())
    });
}

fn bench_w2(c: &mut Criterion) {
    let cloud = standard_cloud(4096, 6);
    let xs: Vec<f64> = cloud.column(0).to_vec();
    let ys: Vec<f64> = cloud.column(1).to_vec();
    c.bench_function("w2_1d/4096", |b| {
        b.iter(|| w2_1d(black_box(&xs), black_box(&ys)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_particle_step,
    bench_fm_step,
    bench_integrate,
    bench_kernel,
    bench_w2
);
criterion_main!(benches);
