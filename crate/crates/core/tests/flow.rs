mod support;

use ndarray::Array2;
use ocp_core::flow::{Flow, FlowConfig, FlowTraining};
use ocp_core::problems::Interval;
use ocp_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::*;

#[test]
fn round_trip_on_ten_thousand_points() {
    for d in [2, 5, 12] {
        let err = round_trip_error(&perturbed_flow(d, 11), 10_000, 1);
        assert!(err < 1e-6, "d = {d}: round trip error {err:e}");
    }
}

#[test]
fn log_det_matches_numerical_jacobian() {
    let err = logdet_error_2d(&perturbed_flow(2, 5), 200, 2);
    assert!(err < 1e-4, "log-det error {err:e}");
}

#[test]
fn density_integrates_to_one() {
    let (mass, se) = normalization(&perturbed_flow(2, 8), 400_000, 3);
    assert!((mass - 1.0).abs() < 1e-2, "mass {mass} ± {se}");
}

#[test]
fn two_bump_target_is_recovered() {
    let fit = fit_two_bumps(1);
    assert!(fit.tv < 0.1, "{fit:?}");
    assert!(fit.mode_a >= 0.25 && fit.mode_b >= 0.25, "{fit:?}");
}

/// Moments of `σ(z)` for standard normal `z` by the trapezoid rule.
fn logistic_normal_moments() -> (f64, f64) {
    let (n, a) = (48_000, 12.0);
    let h = 2.0 * a / n as f64;
    let (mut m2, mut m4) = (0.0, 0.0);
    for i in 0..=n {
        let z = -a + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let c = 1.0 / (1.0 + (-z).exp()) - 0.5;
        m2 += w * h * phi * c * c;
        m4 += w * h * phi * c.powi(4);
    }
    (m2, m4)
}

#[test]
fn identity_flow_samples_a_squashed_normal() {
    let bounds = [Interval::new(0.0, 1.0), Interval::new(-1.0, 2.0), Interval::new(-5.0, -4.5)];
    let f = Flow::new(&bounds, FlowConfig::default(), 7).unwrap();
    let n = 100_000;
    let (x, _) = f.sample(n, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let (m2, m4) = logistic_normal_moments();
    for (k, b) in bounds.iter().enumerate() {
        let w = b.width();
        let col: Vec<f64> = x.column(k).to_vec();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (ev, em4) = (w * w * m2, w.powi(4) * m4);
        let se_mean = (ev / n as f64).sqrt();
        let se_var = ((em4 - ev * ev) / n as f64).sqrt();
        assert!((mean - b.center()).abs() < 3.0 * se_mean, "coordinate {k}: mean {mean}");
        assert!((var - ev).abs() < 3.0 * se_var, "coordinate {k}: variance {var} vs {ev}");
    }
}

#[test]
fn identity_flow_density_closed_form() {
    let bounds = [Interval::new(0.0, 1.0), Interval::new(-1.0, 2.0)];
    let f = Flow::new(&bounds, FlowConfig::default(), 0).unwrap();
    // Per coordinate, log p = log φ(z) − log(w s (1 − s)) with s = σ(z).
    let logp = |s: f64, w: f64| {
        let z = (s / (1.0 - s)).ln();
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - (w * s * (1.0 - s)).ln()
    };
    let center = Array2::from_shape_vec((1, 2), vec![0.5, 0.5]).unwrap();
    let edge = Array2::from_shape_vec((1, 2), vec![0.99, -1.0 + 3.0 * 0.02]).unwrap();
    let lp = f.log_density(&center).unwrap()[0] - f.log_density(&edge).unwrap()[0];
    let expect = (logp(0.5, 1.0) + logp(0.5, 3.0)) - (logp(0.99, 1.0) + logp(0.02, 3.0));
    assert!((lp - expect).abs() < 1e-10, "{lp} vs {expect}");

    let (x, ld) = f.from_latent(&Array2::zeros((1, 2))).unwrap();
    assert!((x[[0, 0]] - 0.5).abs() < 1e-15 && (x[[0, 1]] - 0.5).abs() < 1e-15);
    assert!((ld[0] - (0.25f64.ln() + 0.75f64.ln())).abs() < 1e-12);
}

/// A uniform midpoint grid on the box as the proposal, so the estimator
/// becomes a quadrature of `−∫ r log p`.
fn grid_batch(f: &Flow, per_side: usize) -> (Array2<f64>, Vec<f64>) {
    let b = f.bounds();
    let vol: f64 = b.iter().map(Interval::width).product();
    let mut x = Array2::zeros((per_side * per_side, 2));
    for i in 0..per_side {
        for j in 0..per_side {
            x[[i * per_side + j, 0]] = b[0].lo + (i as f64 + 0.5) / per_side as f64 * b[0].width();
            x[[i * per_side + j, 1]] = b[1].lo + (j as f64 + 0.5) / per_side as f64 * b[1].width();
        }
    }
    (x, vec![-vol.ln(); per_side * per_side])
}

#[test]
fn self_target_is_stationary_and_loss_is_linear_in_target() {
    let f = perturbed_flow(2, 3);
    let (x, lq) = grid_batch(&f, 600);
    let r: Vec<f64> = f.log_density(&x).unwrap().into_iter().map(f64::exp).collect();
    let (loss, grad) = f.cross_entropy(&x, &r, &lq).unwrap();
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(norm < 1e-3, "gradient norm {norm:e}");

    let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    let (loss2, _) = f.cross_entropy(&x, &doubled, &lq).unwrap();
    assert_eq!(loss2, 2.0 * loss);
}

#[test]
fn zero_steps_leave_the_flow_unchanged_and_training_is_reproducible() {
    let opts = FlowTraining {
        steps: 0,
        batch: 64,
        learning_rate: 1e-3,
        refresh: 0,
    };
    let mut target = |x: &Array2<f64>| Ok(x.outer_iter().map(|r| two_bumps(r[0], r[1])).collect());
    let mut f = perturbed_flow(2, 1);
    let before = f.clone();
    f.train_cross_entropy(&mut target, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(f, before);

    let opts = FlowTraining { steps: 30, ..opts };
    let train = |target: &mut dyn FnMut(&Array2<f64>) -> ocp_core::Result<Vec<f64>>| {
        let mut f = perturbed_flow(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        f.train_cross_entropy(target, &opts, &mut rng).unwrap();
        f.sample(500, &mut rng).unwrap().0
    };
    let a = train(&mut target);
    let b = train(&mut target);
    assert_eq!(a, b);
}

#[test]
fn non_finite_target_aborts_with_last_good_parameters() {
    let mut f = perturbed_flow(2, 2);
    let before = f.clone();
    let opts = FlowTraining {
        steps: 5,
        batch: 16,
        learning_rate: 1e-3,
        refresh: 0,
    };
    let mut bad = |x: &Array2<f64>| Ok(vec![f64::NAN; x.nrows()]);
    let err = f.train_cross_entropy(&mut bad, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
    assert_eq!(f, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn inverse_and_density_are_consistent(seed in 0u64..1000, d in 1usize..6, count in 1usize..40) {
        let f = perturbed_flow(d, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (x, lp) = f.sample(count, &mut rng).unwrap();
        let direct = f.log_density(&x).unwrap();
        let (z, ld) = f.to_latent(&x).unwrap();
        let (back, ld_inv) = f.from_latent(&z).unwrap();
        for i in 0..count {
            prop_assert!((lp[i] - direct[i]).abs() < 1e-8 * (1.0 + lp[i].abs()));
            prop_assert!((ld[i] + ld_inv[i]).abs() < 1e-8 * (1.0 + ld[i].abs()));
            for k in 0..d {
                prop_assert!((back[[i, k]] - x[[i, k]]).abs() < 1e-9);
                prop_assert!(x[[i, k]] > -1.0 && x[[i, k]] < 2.0);
            }
        }
    }

    #[test]
    fn points_off_the_box_have_no_density(seed in 0u64..1000, k in 0usize..3, over in 0.0f64..5.0) {
        let f = perturbed_flow(3, seed);
        let mut x = Array2::from_elem((1, 3), 0.5);
        x[[0, k]] = 2.0 + over;
        prop_assert_eq!(f.log_density(&x).unwrap()[0], f64::NEG_INFINITY);
        prop_assert!(matches!(f.to_latent(&x), Err(Error::Domain(_))));
    }
}
