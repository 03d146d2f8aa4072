//! Rectangle with a parametric circular hole and a piecewise desired state.
//!
//! Ω(ξ) = [0,2]×[0,1] minus the disk of radius ξ₁ about (1.5, 0.5);
//! y_d = 1 on x₁ ≤ 1 and ξ₂ elsewhere; y = 1 on ∂Ω; distributed control
//! in [0, 10]; α = 0.001.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ControlKind, Interval, Jet, ProblemSpec, SpatioParamPoint, Wrap};

pub const ALPHA: f64 = 0.001;
pub const CONTROL_LO: f64 = 0.0;
pub const CONTROL_HI: f64 = 10.0;
const CX: f64 = 1.5;
const CY: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default)]
pub struct Test1;

/// Length factor `x₁(2−x₁)·x₂(1−x₂)·((x₁−1.5)² + (x₂−0.5)² − ξ₁²)` with its
/// gradient and Laplacian in x. Positive inside Ω(ξ), zero on ∂Ω(ξ).
pub fn length_factor(point: &[f64]) -> Jet {
    let (x1, x2, r) = (point[0], point[1], point[2]);
    let a = x1 * (2.0 - x1);
    let a1 = 2.0 - 2.0 * x1;
    let a11 = -2.0;
    let b = x2 * (1.0 - x2);
    let b2 = 1.0 - 2.0 * x2;
    let b22 = -2.0;
    let c = (x1 - CX).powi(2) + (x2 - CY).powi(2) - r * r;
    let c1 = 2.0 * (x1 - CX);
    let c2 = 2.0 * (x2 - CY);
    // ∂²c/∂x₁² = ∂²c/∂x₂² = 2
    let value = a * b * c;
    let g1 = a1 * b * c + a * b * c1;
    let g2 = a * b2 * c + a * b * c2;
    let l11 = a11 * b * c + 2.0 * a1 * b * c1 + a * b * 2.0;
    let l22 = a * b22 * c + 2.0 * a * b2 * c2 + a * b * 2.0;
    Jet {
        value,
        grad: vec![g1, g2],
        lap: l11 + l22,
    }
}

impl ProblemSpec for Test1 {
    fn name(&self) -> &'static str {
        "test1"
    }

    fn spatial_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn spatial_hull(&self) -> Vec<Interval> {
        vec![Interval::new(0.0, 2.0), Interval::new(0.0, 1.0)]
    }

    fn param_box(&self) -> Vec<Interval> {
        vec![Interval::new(0.05, 0.45), Interval::new(0.5, 2.5)]
    }

    fn contains(&self, p: &[f64]) -> bool {
        self.hull().iter().zip(p).all(|(iv, &v)| iv.contains(v))
            && (p[0] - CX).powi(2) + (p[1] - CY).powi(2) >= p[2] * p[2]
    }

    fn alpha(&self) -> f64 {
        ALPHA
    }

    fn control_bounds(&self, _: &[f64]) -> (f64, f64) {
        (CONTROL_LO, CONTROL_HI)
    }

    fn desired_state(&self, p: &[f64]) -> f64 {
        if p[0] <= 1.0 {
            1.0
        } else {
            p[3]
        }
    }

    fn feature_dim(&self) -> usize {
        4
    }

    fn features(&self, p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }

    fn laplacian_dims(&self) -> usize {
        2
    }

    fn state_wrap(&self, p: &[f64]) -> Option<Wrap> {
        Some(Wrap {
            length: length_factor(p),
            offset: Jet::constant(1.0, 2),
        })
    }

    fn adjoint_wrap(&self, p: &[f64]) -> Wrap {
        Wrap {
            length: length_factor(p),
            offset: Jet::constant(0.0, 2),
        }
    }

    fn control_kind(&self) -> ControlKind {
        ControlKind::Distributed
    }

    fn adjoint_sensitivity(&self, _: &[f64], p: f64, _: &[f64]) -> f64 {
        p
    }

    fn sample_boundary(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<SpatioParamPoint> {
        let gamma = self.param_box();
        (0..count)
            .map(|_| {
                let xi1 = rng.random_range(gamma[0].lo..=gamma[0].hi);
                let xi2 = rng.random_range(gamma[1].lo..=gamma[1].hi);
                let t: f64 = rng.random_range(0.0..1.0);
                let (x1, x2) = match rng.random_range(0..5) {
                    0 => (2.0 * t, 0.0),
                    1 => (2.0 * t, 1.0),
                    2 => (0.0, t),
                    3 => (2.0, t),
                    _ => {
                        let th = 2.0 * PI * t;
                        (CX + xi1 * th.cos(), CY + xi1 * th.sin())
                    }
                };
                vec![x1, x2, xi1, xi2]
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{sample_uniform, sample_uniform_counted};
    use rand::SeedableRng;

    #[test]
    fn hand_examples() {
        let p = Test1;
        assert!(!p.contains(&[1.5, 0.5, 0.2, 1.0]));
        assert!(p.contains(&[0.5, 0.5, 0.2, 1.0]));
        assert!(length_factor(&[1.5 + 0.2, 0.5, 0.2, 1.0]).value.abs() < 1e-15);
        assert_eq!(p.desired_state(&[0.5, 0.5, 0.2, 2.0]), 1.0);
        assert_eq!(p.desired_state(&[1.2, 0.5, 0.2, 2.0]), 2.0);
    }

    #[test]
    fn length_factor_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-4;
        for _ in 0..50 {
            let q = [
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.45),
                1.0,
            ];
            let j = length_factor(&q);
            let f = |d0: f64, d1: f64| length_factor(&[q[0] + d0, q[1] + d1, q[2], q[3]]).value;
            let g1 = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
            let g2 = (f(0.0, h) - f(0.0, -h)) / (2.0 * h);
            let lap = (f(h, 0.0) + f(-h, 0.0) + f(0.0, h) + f(0.0, -h) - 4.0 * j.value) / (h * h);
            assert!((g1 - j.grad[0]).abs() < 1e-6);
            assert!((g2 - j.grad[1]).abs() < 1e-6);
            assert!((lap - j.lap).abs() < 1e-4);
        }
    }

    #[test]
    fn length_factor_vanishes_on_boundary_and_is_positive_inside() {
        let p = Test1;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for b in p.sample_boundary(&mut rng, 10_000) {
            assert!(length_factor(&b).value.abs() < 1e-12, "{b:?}");
        }
        let set = sample_uniform(&p, 10_000, &mut rng).unwrap();
        for q in set.iter() {
            let on_edge = q[0] == 0.0 || q[0] == 2.0 || q[1] == 0.0 || q[1] == 1.0;
            assert!(on_edge || length_factor(q).value > 0.0, "{q:?}");
        }
    }

    #[test]
    fn uniform_sample_avoids_the_hole_and_matches_area_ratio() {
        let p = Test1;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_uniform_counted(&p, 10_000, &mut rng).unwrap();
        assert!(s.set.iter().all(|q| p.contains(q)));
        // Acceptance = 1 − π E[ξ₁²]/2 with ξ₁ ~ U[0.05, 0.45].
        let e_r2 = (0.45f64.powi(3) - 0.05f64.powi(3)) / (3.0 * 0.4);
        let expected = 1.0 - PI * e_r2 / 2.0;
        let n = s.proposals as f64;
        let observed = 10_000.0 / n;
        let se = (expected * (1.0 - expected) / n).sqrt();
        assert!((observed - expected).abs() < 3.0 * se, "{observed} vs {expected}");

        let fixed = sample_uniform(&p, 10_000, &mut rng).unwrap();
        assert!(fixed.iter().filter(|q| q[2] > 0.449).all(|q| {
            (q[0] - CX).powi(2) + (q[1] - CY).powi(2) >= 0.449f64.powi(2)
        }));
    }
}
