//! Measurements shared by the integration suites and the acceptance run.
#![allow(dead_code)]

pub mod prefit;

use std::time::Instant;

use ndarray::Array2;
use ocp_core::flow::{Flow, FlowConfig, FlowTraining};
use ocp_core::problems::Interval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Flow on `[-1, 2]^d` with every parameter moved off its initial value, so
/// no layer is the identity.
pub fn perturbed_flow(d: usize, seed: u64) -> Flow {
    let cfg = FlowConfig {
        blocks: 3,
        layers: 2,
        hidden: 8,
        depth: 2,
        scale_cap: 2.0,
    };
    let mut f = Flow::new(&vec![Interval::new(-1.0, 2.0); d], cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<f64> = f.params().iter().map(|v| v + 0.3 * rng.random_range(-1.0..1.0)).collect();
    f.set_params(&p).unwrap();
    f
}

/// Largest coordinate error of `x → z → x` over `n` flow samples.
pub fn round_trip_error(flow: &Flow, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, _) = flow.sample(n, &mut rng).unwrap();
    let (z, _) = flow.to_latent(&x).unwrap();
    let (back, _) = flow.from_latent(&z).unwrap();
    (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Largest gap between the log-determinant the flow reports for
/// `z → x` and `log |det J|` of a central-difference Jacobian, over `n`
/// latent points of a 2-D flow.
pub fn logdet_error_2d(flow: &Flow, n: usize, seed: u64) -> f64 {
    assert_eq!(flow.dim(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let z = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let row = |a: f64, b: f64| Array2::from_shape_vec((1, 2), vec![a, b]).unwrap();
        let (_, ld) = flow.from_latent(&row(z[0], z[1])).unwrap();
        let mut jac = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut up = z;
            let mut down = z;
            up[k] += h;
            down[k] -= h;
            let (xu, _) = flow.from_latent(&row(up[0], up[1])).unwrap();
            let (xd, _) = flow.from_latent(&row(down[0], down[1])).unwrap();
            for i in 0..2 {
                jac[i][k] = (xu[[0, i]] - xd[[0, i]]) / (2.0 * h);
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        worst = worst.max((det.abs().ln() - ld[0]).abs());
    }
    worst
}

/// Uniform Monte Carlo estimate of `∫_B exp(log p)` with its standard error.
pub fn normalization(flow: &Flow, n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = flow.bounds();
    let vol: f64 = b.iter().map(Interval::width).product();
    let mut x = Array2::zeros((n, b.len()));
    for mut row in x.outer_iter_mut() {
        for (v, iv) in row.iter_mut().zip(&b) {
            *v = rng.random_range(iv.lo..iv.hi);
        }
    }
    let p: Vec<f64> = flow.log_density(&x).unwrap().into_iter().map(|l| vol * l.exp()).collect();
    let mean = p.iter().sum::<f64>() / n as f64;
    let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub const BUMP_A: [f64; 2] = [-0.5, -0.5];
pub const BUMP_B: [f64; 2] = [0.5, 0.4];
const BUMP_SIGMA: f64 = 0.15;

/// Equal-weight Gaussian bumps on `[-1, 1]²`, unnormalized.
pub fn two_bumps(x: f64, y: f64) -> f64 {
    let s2 = 2.0 * BUMP_SIGMA * BUMP_SIGMA;
    let g = |c: [f64; 2]| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / s2).exp();
    g(BUMP_A) + g(BUMP_B)
}

#[derive(Debug, Clone, Copy)]
pub struct BumpFit {
    /// Total variation between the sample histogram and the target on a
    /// 40×40 grid.
    pub tv: f64,
    /// Fractions of samples nearer to each bump center.
    pub mode_a: f64,
    pub mode_b: f64,
    pub seconds: f64,
}

/// Fits a flow to [`two_bumps`] by cross-entropy, refreshing the proposal
/// every 50 steps, and compares 10⁵ samples with the target. The reference histogram integrates the target with a
/// 4×4 midpoint rule per cell and is normalized on the grid.
pub fn fit_two_bumps(seed: u64) -> BumpFit {
    let start = Instant::now();
    let bounds = vec![Interval::new(-1.0, 1.0); 2];
    let cfg = FlowConfig {
        blocks: 4,
        layers: 2,
        hidden: 32,
        depth: 2,
        scale_cap: 3.0,
    };
    let mut flow = Flow::new(&bounds, cfg, seed).unwrap();
    let opts = FlowTraining {
        steps: 2000,
        batch: 1000,
        learning_rate: 3e-3,
        refresh: 50,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut target = |x: &Array2<f64>| Ok(x.outer_iter().map(|r| two_bumps(r[0], r[1])).collect());
    flow.train_cross_entropy(&mut target, &opts, &mut rng).unwrap();

    let n = 100_000;
    let (x, _) = flow.sample(n, &mut rng).unwrap();
    let g = 40;
    let cell = |v: f64| (((v + 1.0) / 2.0 * g as f64) as usize).min(g - 1);
    let mut hist = vec![0.0; g * g];
    let mut nearer_a = 0usize;
    for r in x.outer_iter() {
        hist[cell(r[0]) * g + cell(r[1])] += 1.0 / n as f64;
        let da = (r[0] - BUMP_A[0]).powi(2) + (r[1] - BUMP_A[1]).powi(2);
        let db = (r[0] - BUMP_B[0]).powi(2) + (r[1] - BUMP_B[1]).powi(2);
        if da < db {
            nearer_a += 1;
        }
    }
    let mut reference = vec![0.0; g * g];
    let w = 2.0 / g as f64;
    for i in 0..g {
        for j in 0..g {
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    let px = -1.0 + (i as f64 + (a as f64 + 0.5) / 4.0) * w;
                    let py = -1.0 + (j as f64 + (b as f64 + 0.5) / 4.0) * w;
                    s += two_bumps(px, py);
                }
            }
            reference[i * g + j] = s;
        }
    }
    let z: f64 = reference.iter().sum();
    let tv = 0.5 * hist.iter().zip(&reference).map(|(h, r)| (h - r / z).abs()).sum::<f64>();
    BumpFit {
        tv,
        mode_a: nearer_a as f64 / n as f64,
        mode_b: (n - nearer_a) as f64 / n as f64,
        seconds: start.elapsed().as_secs_f64(),
    }
}
