//! Hot kernels of a training stage: network jets, residuals and the flow.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use ocp_core::adaptive::residual_density;
use ocp_core::aonn::{Architecture, SurrogateTriplet};
use ocp_core::diffcore::{mlp_init, Activation, Method};
use ocp_core::flow::{Flow, FlowConfig};
use ocp_core::problems::{by_name, sample_uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn network(c: &mut Criterion) {
    let net = mlp_init(&[12, 20, 20, 20, 20, 20, 1], Activation::Tanh, 1).unwrap();
    let x = Array2::from_shape_fn((1000, 12), |(i, j)| ((i * 12 + j) as f64 * 0.37).sin());
    c.bench_function("forward_batch 1000x12", |b| b.iter(|| net.forward_batch(&x).unwrap()));
    let p: Vec<f64> = x.row(0).to_vec();
    c.bench_function("laplacian 12 inputs, 2 spatial", |b| b.iter(|| net.laplacian(&p, &[0, 1]).unwrap()));
}

fn residuals(c: &mut Criterion) {
    let problem = by_name("test3", None).unwrap();
    let arch = Architecture {
        hidden: vec![20; 5],
        activation: Activation::Tanh,
    };
    let t = SurrogateTriplet::new(problem.as_ref(), &arch, Method::default(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pts: Vec<Vec<f64>> = sample_uniform(problem.as_ref(), 500, &mut rng)
        .unwrap()
        .iter()
        .map(<[f64]>::to_vec)
        .collect();
    c.bench_function("test3 residual density, 500 points", |b| {
        b.iter(|| residual_density(&t, problem.as_ref(), &pts).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let problem = by_name("test3", None).unwrap();
    let f = Flow::new(&problem.hull(), FlowConfig::default(), 5).unwrap();
    c.bench_function("flow sample 1000 in 12d", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(1),
            |mut rng| f.sample(1000, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let (x, _) = f.sample(1000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let r = vec![1.0; 1000];
    let lq = f.log_density(&x).unwrap();
    c.bench_function("flow cross-entropy gradient 1000 in 12d", |b| {
        b.iter(|| f.cross_entropy(&x, &r, &lq).unwrap())
    });
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = network, residuals, flow
}
criterion_main!(kernels);
