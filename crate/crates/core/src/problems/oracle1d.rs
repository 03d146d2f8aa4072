//! One-dimensional distributed control with a closed-form solution:
//! `−y'' = u` on (0, 1), `y(0) = y(1) = 0`, no control bounds, and
//! `y_d = −sin(πx)/π² − απ² sin(πx)`, so that `u* = −sin(πx)`,
//! `y* = −sin(πx)/π²`, `p* = α sin(πx)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ControlKind, Interval, Jet, ProblemSpec, SpatioParamPoint, Wrap};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy)]
pub struct Oracle1d {
    alpha: f64,
}

impl Default for Oracle1d {
    fn default() -> Self {
        Oracle1d {
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl Oracle1d {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Oracle1d { alpha })
    }
}

fn length(x: f64) -> Jet {
    Jet {
        value: x * (1.0 - x),
        grad: vec![1.0 - 2.0 * x],
        lap: -2.0,
    }
}

impl ProblemSpec for Oracle1d {
    fn name(&self) -> &'static str {
        "oracle1d"
    }

    fn spatial_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn spatial_hull(&self) -> Vec<Interval> {
        vec![Interval::new(0.0, 1.0)]
    }

    fn param_box(&self) -> Vec<Interval> {
        Vec::new()
    }

    fn contains(&self, p: &[f64]) -> bool {
        p.len() == 1 && (0.0..=1.0).contains(&p[0])
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn control_bounds(&self, _: &[f64]) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn desired_state(&self, p: &[f64]) -> f64 {
        let s = (PI * p[0]).sin();
        -s / (PI * PI) - self.alpha * PI * PI * s
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn features(&self, p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }

    fn laplacian_dims(&self) -> usize {
        1
    }

    fn state_wrap(&self, p: &[f64]) -> Option<Wrap> {
        Some(self.adjoint_wrap(p))
    }

    fn adjoint_wrap(&self, p: &[f64]) -> Wrap {
        Wrap {
            length: length(p[0]),
            offset: Jet::constant(0.0, 1),
        }
    }

    fn control_kind(&self) -> ControlKind {
        ControlKind::Distributed
    }

    fn adjoint_sensitivity(&self, _: &[f64], p: f64, _: &[f64]) -> f64 {
        p
    }

    fn sample_boundary(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<SpatioParamPoint> {
        (0..count)
            .map(|_| vec![if rng.random_bool(0.5) { 0.0 } else { 1.0 }])
            .collect()
    }

    fn exact_state(&self, p: &[f64]) -> Option<f64> {
        Some(-(PI * p[0]).sin() / (PI * PI))
    }

    fn exact_control(&self, p: &[f64]) -> Option<f64> {
        Some(-(PI * p[0]).sin())
    }

    fn exact_adjoint(&self, p: &[f64]) -> Option<f64> {
        Some(self.alpha * (PI * p[0]).sin())
    }
}
