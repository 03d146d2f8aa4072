//! Boundary control of the Laplace equation on the unit disk with a
//! ten-dimensional parameter concentrating the solution near ξ = 0.
//!
//! Points are `(r, θ, ξ₁..ξ₁₀)`. With `g = exp(−10‖ξ‖²)` and
//! `w = r² cos 2θ`, the problem
//!
//! ```text
//! −Δy = 0 in Ω,  y = u on ∂Ω,  0 ≤ u ≤ 1,
//! −Δp = y − y_d in Ω,  p = 0 on ∂Ω,  d_uJ = αu − ∂p/∂n
//! ```
//!
//! with `y_d = (½ + ½w)g + αg(1 + 3w)` has the exact solution
//! `y* = (½ + ½w)g`, `u* = cos²θ·g`, `p* = (α/4)g(r² − 1)(1 + w)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_xi, linspace, ControlKind, Interval, Jet, ProblemSpec, SpatioParamPoint, Wrap};
use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.01;
pub const PARAM_DIM: usize = 10;

#[derive(Debug, Clone, Copy, Default)]
pub struct Test3;

/// `exp(−10‖ξ‖²)`.
pub fn bump(xi: &[f64]) -> f64 {
    (-10.0 * xi.iter().map(|v| v * v).sum::<f64>()).exp()
}

fn cart_w(point: &[f64]) -> f64 {
    point[0] * point[0] * (2.0 * point[1]).cos()
}

/// Interior factor `p̂_I*` of the exact adjoint, `p* = (1 − r²)·p̂_I*`.
pub fn exact_adjoint_interior(point: &[f64]) -> f64 {
    -0.25 * ALPHA * bump(&point[2..]) * (1.0 + cart_w(point))
}

impl ProblemSpec for Test3 {
    fn name(&self) -> &'static str {
        "test3"
    }

    fn spatial_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        PARAM_DIM
    }

    fn spatial_hull(&self) -> Vec<Interval> {
        vec![Interval::new(0.0, 1.0), Interval::new(0.0, 2.0 * PI)]
    }

    fn param_box(&self) -> Vec<Interval> {
        vec![Interval::new(-1.0, 1.0); PARAM_DIM]
    }

    fn contains(&self, p: &[f64]) -> bool {
        p.len() == 2 + PARAM_DIM && self.hull().iter().zip(p).all(|(iv, &v)| iv.contains(v))
    }

    fn alpha(&self) -> f64 {
        ALPHA
    }

    fn control_bounds(&self, _: &[f64]) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn desired_state(&self, p: &[f64]) -> f64 {
        let g = bump(&p[2..]);
        let w = cart_w(p);
        (0.5 + 0.5 * w) * g + ALPHA * g * (1.0 + 3.0 * w)
    }

    fn feature_dim(&self) -> usize {
        2 + PARAM_DIM
    }

    fn features(&self, p: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 + PARAM_DIM);
        f.push(p[0] * p[1].cos());
        f.push(p[0] * p[1].sin());
        f.extend_from_slice(&p[2..]);
        f
    }

    fn laplacian_dims(&self) -> usize {
        2
    }

    fn state_wrap(&self, _: &[f64]) -> Option<Wrap> {
        None
    }

    fn adjoint_wrap(&self, p: &[f64]) -> Wrap {
        let (x1, x2) = (p[0] * p[1].cos(), p[0] * p[1].sin());
        Wrap {
            length: Jet {
                value: 1.0 - x1 * x1 - x2 * x2,
                grad: vec![-2.0 * x1, -2.0 * x2],
                lap: -4.0,
            },
            offset: Jet::constant(0.0, 2),
        }
    }

    fn control_kind(&self) -> ControlKind {
        ControlKind::Boundary
    }

    fn control_point(&self, p: &[f64]) -> Vec<f64> {
        let mut c = p.to_vec();
        c[0] = 1.0;
        c
    }

    fn control_features(&self, cp: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(2 + PARAM_DIM);
        f.push(cp[1].cos());
        f.push(cp[1].sin());
        f.extend_from_slice(&cp[2..]);
        f
    }

    fn adjoint_sensitivity(&self, cp: &[f64], _p: f64, grad_p: &[f64]) -> f64 {
        -(grad_p[0] * cp[1].cos() + grad_p[1] * cp[1].sin())
    }

    fn sample_boundary(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<SpatioParamPoint> {
        (0..count)
            .map(|_| {
                let mut p = vec![1.0, rng.random_range(0.0..2.0 * PI)];
                p.extend((0..PARAM_DIM).map(|_| rng.random_range(-1.0..=1.0)));
                p
            })
            .collect()
    }

    fn exact_state(&self, p: &[f64]) -> Option<f64> {
        Some((0.5 + 0.5 * cart_w(p)) * bump(&p[2..]))
    }

    fn exact_control(&self, cp: &[f64]) -> Option<f64> {
        Some((cp[1].cos().powi(2) * bump(&cp[2..])).clamp(0.0, 1.0))
    }

    fn exact_adjoint(&self, p: &[f64]) -> Option<f64> {
        Some((1.0 - p[0] * p[0]) * exact_adjoint_interior(p))
    }

    /// Polar grid: `resolution = [n_r, n_θ]`, radii evenly spaced on [0, 1]
    /// (a single radius means the center), angles `2πk/n_θ`.
    fn grid_points(&self, xi: &[f64], resolution: &[usize]) -> Result<Vec<SpatioParamPoint>> {
        check_xi(self, xi)?;
        let (radii, angles) = polar_axes(resolution)?;
        let mut out = Vec::with_capacity(radii.len() * angles.len());
        for &r in &radii {
            for &th in &angles {
                let mut p = vec![r, th];
                p.extend_from_slice(xi);
                out.push(p);
                if r == 0.0 {
                    break;
                }
            }
        }
        Ok(out)
    }

    fn control_grid_points(&self, xi: &[f64], resolution: &[usize]) -> Result<Vec<SpatioParamPoint>> {
        check_xi(self, xi)?;
        let (_, angles) = polar_axes(resolution)?;
        Ok(angles
            .into_iter()
            .map(|th| {
                let mut p = vec![1.0, th];
                p.extend_from_slice(xi);
                p
            })
            .collect())
    }
}

fn polar_axes(resolution: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if resolution.len() != 2 || resolution.contains(&0) {
        return Err(Error::Config(format!(
            "polar resolution must be [n_r, n_theta] with positive entries, got {resolution:?}"
        )));
    }
    let radii = if resolution[0] == 1 {
        vec![0.0]
    } else {
        linspace(0.0, 1.0, resolution[0])
    };
    let nt = resolution[1];
    let angles = (0..nt).map(|k| 2.0 * PI * k as f64 / nt as f64).collect();
    Ok((radii, angles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn polar(x1: f64, x2: f64, xi: &[f64]) -> Vec<f64> {
        let mut p = vec![x1.hypot(x2), x2.atan2(x1).rem_euclid(2.0 * PI)];
        p.extend_from_slice(xi);
        p
    }

    #[test]
    fn exact_solution_examples() {
        let p = Test3;
        let zero = [0.0; PARAM_DIM];
        let mut cp = vec![1.0, 0.0];
        cp.extend_from_slice(&zero);
        assert_eq!(p.exact_control(&cp), Some(1.0));
        let mut xi = vec![0.3; PARAM_DIM];
        xi[4] = -0.7;
        let mut cp = vec![1.0, PI / 2.0];
        cp.extend_from_slice(&xi);
        assert!(p.exact_control(&cp).unwrap().abs() < 1e-16);
        let mut c = vec![0.0, 1.3];
        c.extend_from_slice(&zero);
        assert_eq!(p.exact_state(&c), Some(0.5));
    }

    /// Residuals of the closed forms by central differences in Cartesian
    /// coordinates.
    #[test]
    fn exact_triple_satisfies_the_optimality_system() {
        let p = Test3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-3;
        for _ in 0..200 {
            let xi: Vec<f64> = (0..PARAM_DIM).map(|_| rng.random_range(-0.3..0.3)).collect();
            let r: f64 = rng.random_range(0.0..0.95);
            let th: f64 = rng.random_range(0.0..2.0 * PI);
            let (x1, x2) = (r * th.cos(), r * th.sin());
            let at = |f: &dyn Fn(&[f64]) -> Option<f64>, a: f64, b: f64| f(&polar(a, b, &xi)).unwrap();
            let lap = |f: &dyn Fn(&[f64]) -> Option<f64>| {
                (at(f, x1 + h, x2) + at(f, x1 - h, x2) + at(f, x1, x2 + h) + at(f, x1, x2 - h)
                    - 4.0 * at(f, x1, x2))
                    / (h * h)
            };
            let ys = |q: &[f64]| p.exact_state(q);
            let ps = |q: &[f64]| p.exact_adjoint(q);
            let here = polar(x1, x2, &xi);
            let rs = -lap(&ys);
            let ra = -lap(&ps) - (p.exact_state(&here).unwrap() - p.desired_state(&here));
            assert!(rs.abs() < 1e-8, "state residual {rs}");
            assert!(ra.abs() < 1e-8, "adjoint residual {ra}");

            // Boundary: y* = u*, p* = 0 and αu* − ∂p*/∂n = 0.
            let (b1, b2) = (th.cos(), th.sin());
            let bp = polar(b1, b2, &xi);
            assert!((p.exact_state(&bp).unwrap() - p.exact_control(&bp).unwrap()).abs() < 1e-12);
            assert!(p.exact_adjoint(&bp).unwrap().abs() < 1e-15);
            let dn = (at(&ps, b1 * (1.0 + h), b2 * (1.0 + h)) - at(&ps, b1 * (1.0 - h), b2 * (1.0 - h)))
                / (2.0 * h);
            let u = p.exact_control(&bp).unwrap();
            if u > 0.0 && u < 1.0 {
                assert!((ALPHA * u - dn).abs() < 1e-8, "stationarity {}", ALPHA * u - dn);
            }
        }
    }

    #[test]
    fn adjoint_wrap_reproduces_exact_adjoint_and_vanishes_on_boundary() {
        let p = Test3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for b in p.sample_boundary(&mut rng, 10_000) {
            assert!(p.adjoint_wrap(&b).length.value.abs() < 1e-12);
        }
        for _ in 0..1000 {
            let mut q = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..2.0 * PI)];
            q.extend((0..PARAM_DIM).map(|_| rng.random_range(-1.0..1.0)));
            let w = p.adjoint_wrap(&q);
            assert!(q[0] == 1.0 || w.length.value > 0.0);
            let e = w.length.value * exact_adjoint_interior(&q);
            assert!((e - p.exact_adjoint(&q).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn sensitivity_at_exact_solution_cancels_control() {
        let p = Test3;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for cp in p.sample_boundary(&mut rng, 100) {
            // ∇p* at r = 1 is ∇l · p̂_I* = −2x p̂_I*.
            let pi = exact_adjoint_interior(&cp);
            let grad = [-2.0 * cp[1].cos() * pi, -2.0 * cp[1].sin() * pi];
            let q = p.adjoint_sensitivity(&cp, 0.0, &grad);
            let u = p.exact_control(&cp).unwrap();
            assert!((ALPHA * u + q).abs() < 1e-15);
        }
    }

    #[test]
    fn polar_grids() {
        let p = Test3;
        let xi = [0.0; PARAM_DIM];
        assert_eq!(p.grid_points(&xi, &[1, 1]).unwrap().len(), 1);
        assert_eq!(p.grid_points(&xi, &[1, 1]).unwrap()[0][0], 0.0);
        let g = p.grid_points(&xi, &[5, 8]).unwrap();
        assert_eq!(g.len(), 1 + 4 * 8);
        assert!(g.iter().all(|q| p.contains(q)));
        assert_eq!(p.control_grid_points(&xi, &[5, 8]).unwrap().len(), 8);
        assert!(matches!(p.grid_points(&[2.0; PARAM_DIM], &[2, 2]), Err(Error::Range(_))));
    }
}
