//! Parametric optimal control problems.
//!
//! A problem describes its joint domain, desired state, control bounds and
//! how the state and adjoint networks are wrapped so that Dirichlet data hold
//! exactly. Points are laid out as `[x¹..xⁿ, ξ¹..ξᵈ]` in the problem's own
//! coordinates (polar for the disk problem); networks see
//! [`ProblemSpec::features`] of a point instead, the first
//! [`ProblemSpec::laplacian_dims`] of which are Cartesian spatial coordinates.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub mod oracle1d;
pub mod test1;
pub mod test3;
pub mod trainset;

pub use oracle1d::Oracle1d;
pub use test1::Test1;
pub use test3::Test3;
pub use trainset::{Source, TrainingSet};

/// A point of the joint spatio-parametric domain.
pub type SpatioParamPoint = Vec<f64>;

/// Fraction of each hull side added on both sides to form the bounding box.
pub const BOX_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn expand(&self, frac: f64) -> Self {
        let m = frac * self.width();
        Interval::new(self.lo - m, self.hi + m)
    }
}

/// Value, gradient and Laplacian of a scalar field with respect to the
/// Laplacian coordinates of the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: Vec<f64>,
    pub lap: f64,
}

impl Jet {
    pub fn constant(value: f64, dims: usize) -> Self {
        Jet {
            value,
            grad: vec![0.0; dims],
            lap: 0.0,
        }
    }
}

/// Hard boundary enforcement `length · N + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Wrap {
    pub length: Jet,
    pub offset: Jet,
}

impl Wrap {
    /// Applies the wrap to a network jet.
    pub fn apply(&self, n: &Jet) -> Jet {
        let l = &self.length;
        let grad = (0..l.grad.len())
            .map(|k| l.grad[k] * n.value + l.value * n.grad[k] + self.offset.grad[k])
            .collect::<Vec<_>>();
        let cross: f64 = (0..l.grad.len()).map(|k| l.grad[k] * n.grad[k]).sum();
        Jet {
            value: l.value * n.value + self.offset.value,
            grad,
            lap: l.lap * n.value + 2.0 * cross + l.value * n.lap + self.offset.lap,
        }
    }
}

/// Where the control acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    /// Source term in the domain.
    Distributed,
    /// Dirichlet data on the spatial boundary.
    Boundary,
}

/// A parametric optimal control problem with a Poisson-type state equation
/// `−Δy = f (+ u)` and adjoint `−Δp = y − y_d`, `p = 0` on the boundary.
pub trait ProblemSpec: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn spatial_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn dim(&self) -> usize {
        self.spatial_dim() + self.param_dim()
    }

    /// Per-coordinate hull of Ω(ξ) over all ξ.
    fn spatial_hull(&self) -> Vec<Interval>;
    fn param_box(&self) -> Vec<Interval>;

    /// Hull of Ω(ξ)×Γ.
    fn hull(&self) -> Vec<Interval> {
        let mut h = self.spatial_hull();
        h.extend(self.param_box());
        h
    }

    /// `B`: the hull widened by [`BOX_MARGIN`] of each side on both ends.
    fn bounding_box(&self) -> Vec<Interval> {
        self.hull().iter().map(|i| i.expand(BOX_MARGIN)).collect()
    }

    /// `(x, ξ) ∈ Ω_Γ`.
    fn contains(&self, point: &[f64]) -> bool;

    fn alpha(&self) -> f64;

    /// `(u_a, u_b)` at a control point.
    fn control_bounds(&self, control_point: &[f64]) -> (f64, f64);

    fn desired_state(&self, point: &[f64]) -> f64;

    /// Right-hand side `f` of the state equation (besides a distributed control).
    fn state_source(&self, _point: &[f64]) -> f64 {
        0.0
    }

    fn feature_dim(&self) -> usize;
    fn features(&self, point: &[f64]) -> Vec<f64>;

    /// Number of leading features the Laplacian acts on.
    fn laplacian_dims(&self) -> usize;

    /// Hard wrap of the state network, or `None` if the state boundary
    /// condition enters the loss as a penalty.
    fn state_wrap(&self, point: &[f64]) -> Option<Wrap>;

    fn adjoint_wrap(&self, point: &[f64]) -> Wrap;

    fn control_kind(&self) -> ControlKind;

    /// Point at which the control associated with `point` lives.
    fn control_point(&self, point: &[f64]) -> Vec<f64> {
        point.to_vec()
    }

    fn control_feature_dim(&self) -> usize {
        self.feature_dim()
    }

    fn control_features(&self, control_point: &[f64]) -> Vec<f64> {
        self.features(control_point)
    }

    /// Adjoint part `q` of the reduced gradient `d_uJ = αu + q` at a control
    /// point, given the adjoint value and gradient there.
    fn adjoint_sensitivity(&self, control_point: &[f64], p: f64, grad_p: &[f64]) -> f64;

    /// Dirichlet data added to the control in a penalized state boundary
    /// condition `y = u + data`.
    fn boundary_data(&self, _boundary_point: &[f64]) -> f64 {
        0.0
    }

    /// Points on the spatial boundary ∂Ω(ξ), ξ uniform on Γ.
    fn sample_boundary(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<SpatioParamPoint>;

    fn exact_state(&self, _point: &[f64]) -> Option<f64> {
        None
    }

    fn exact_control(&self, _control_point: &[f64]) -> Option<f64> {
        None
    }

    fn exact_adjoint(&self, _point: &[f64]) -> Option<f64> {
        None
    }

    /// Evaluation points for fixed ξ: a tensor grid over the spatial hull,
    /// filtered by membership. A resolution of 1 along an axis means the
    /// axis midpoint.
    fn grid_points(&self, xi: &[f64], resolution: &[usize]) -> Result<Vec<SpatioParamPoint>> {
        check_xi(self, xi)?;
        let hull = self.spatial_hull();
        if resolution.len() != hull.len() || resolution.contains(&0) {
            return Err(Error::Config(format!(
                "resolution {resolution:?} does not match {} spatial axes",
                hull.len()
            )));
        }
        let axes: Vec<Vec<f64>> = hull
            .iter()
            .zip(resolution)
            .map(|(iv, &r)| linspace(iv.lo, iv.hi, r))
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; axes.len()];
        loop {
            let mut p: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
            p.extend_from_slice(xi);
            if self.contains(&p) {
                out.push(p);
            }
            // Last axis varies slowest so x1 runs fastest.
            let mut k = 0;
            loop {
                if k == idx.len() {
                    return Ok(out);
                }
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Control points paired with [`ProblemSpec::grid_points`].
    fn control_grid_points(&self, xi: &[f64], resolution: &[usize]) -> Result<Vec<SpatioParamPoint>> {
        self.grid_points(xi, resolution)
    }
}

/// `n` evenly spaced values on `[lo, hi]`; a single value is the midpoint.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn check_xi<P: ProblemSpec + ?Sized>(problem: &P, xi: &[f64]) -> Result<()> {
    let gamma = problem.param_box();
    if xi.len() != gamma.len() {
        return Err(Error::Range(format!(
            "ξ has {} entries, {} expects {}",
            xi.len(),
            problem.name(),
            gamma.len()
        )));
    }
    for (k, (v, iv)) in xi.iter().zip(&gamma).enumerate() {
        if !iv.contains(*v) {
            return Err(Error::Range(format!(
                "ξ{} = {v} outside [{}, {}]",
                k + 1,
                iv.lo,
                iv.hi
            )));
        }
    }
    Ok(())
}

/// Component-wise clamp onto `[lower, upper]`.
pub fn project_admissible(values: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    if values.len() != lower.len() || values.len() != upper.len() {
        return Err(Error::Shape("projection bounds misaligned with values".into()));
    }
    values
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(&v, (&lo, &hi))| {
            if lo > hi {
                Err(Error::Contract(format!("lower bound {lo} exceeds upper bound {hi}")))
            } else {
                Ok(v.clamp(lo, hi))
            }
        })
        .collect()
}

/// Cutoff `h`: 1 on the hull, decaying linearly to 0 on ∂B across each
/// coordinate's margin band, combined by product; 0 outside B.
pub fn cutoff(point: &[f64], problem: &dyn ProblemSpec) -> f64 {
    let hull = problem.hull();
    let bx = problem.bounding_box();
    let mut h = 1.0;
    for ((&v, inner), outer) in point.iter().zip(&hull).zip(&bx) {
        let f = if v < outer.lo || v > outer.hi {
            0.0
        } else if v < inner.lo {
            (v - outer.lo) / (inner.lo - outer.lo)
        } else if v > inner.hi {
            (outer.hi - v) / (outer.hi - inner.hi)
        } else {
            1.0
        };
        h *= f;
        if h == 0.0 {
            return 0.0;
        }
    }
    h
}

/// Result of rejection sampling with its proposal count.
#[derive(Debug, Clone)]
pub struct UniformSample {
    pub set: TrainingSet,
    pub proposals: usize,
}

const MAX_PROPOSALS: usize = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

/// `count` points uniform on Ω_Γ (in the problem's coordinates), by
/// rejection from the hull of Ω(ξ)×Γ.
pub fn sample_uniform(problem: &dyn ProblemSpec, count: usize, rng: &mut ChaCha8Rng) -> Result<TrainingSet> {
    Ok(sample_uniform_counted(problem, count, rng)?.set)
}

/// [`sample_uniform`] that also reports how many proposals were drawn.
pub fn sample_uniform_counted(
    problem: &dyn ProblemSpec,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UniformSample> {
    if count == 0 {
        return Err(Error::Config("uniform sample of zero points requested".into()));
    }
    let hull = problem.hull();
    let mut set = TrainingSet::new(problem.spatial_dim(), problem.param_dim());
    let mut p = vec![0.0; hull.len()];
    let mut proposals = 0usize;
    let mut window = 0usize;
    let mut window_accepts = 0usize;
    while set.len() < count {
        for (v, iv) in p.iter_mut().zip(&hull) {
            *v = rng.random_range(iv.lo..=iv.hi);
        }
        proposals += 1;
        window += 1;
        if problem.contains(&p) {
            set.push(&p, 0, Source::Uniform)?;
            window_accepts += 1;
        }
        if window == MAX_PROPOSALS {
            if (window_accepts as f64) < MIN_ACCEPTANCE * window as f64 {
                return Err(Error::Geometry(format!(
                    "{}: acceptance {window_accepts}/{window} below {MIN_ACCEPTANCE}",
                    problem.name()
                )));
            }
            window = 0;
            window_accepts = 0;
        }
    }
    Ok(UniformSample { set, proposals })
}

/// Looks up a built-in problem. `alpha` overrides the regularization weight
/// where the problem allows it.
pub fn by_name(name: &str, alpha: Option<f64>) -> Result<Box<dyn ProblemSpec>> {
    match name {
        "test1" => Ok(Box::new(Test1)),
        "test3" => Ok(Box::new(Test3)),
        "oracle1d" => Ok(Box::new(match alpha {
            Some(a) => Oracle1d::new(a)?,
            None => Oracle1d::default(),
        })),
        other => Err(Error::Config(format!(
            "unknown problem `{other}` (expected test1, test3 or oracle1d)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn projection_examples() {
        let lo = [0.0; 3];
        let hi = [10.0; 3];
        assert_eq!(project_admissible(&[-0.5, 5.0, 12.0], &lo, &hi).unwrap(), vec![0.0, 5.0, 10.0]);
        assert!(matches!(
            project_admissible(&[1.0], &[2.0], &[1.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cutoff_examples() {
        let p = Oracle1d::default();
        // Hull [0,1], B = [-0.1, 1.1].
        assert_eq!(cutoff(&[0.4], &p), 1.0);
        assert_eq!(cutoff(&[-0.1], &p), 0.0);
        assert_eq!(cutoff(&[1.1], &p), 0.0);
        assert!((cutoff(&[-0.05], &p) - 0.5).abs() < 1e-12);
        assert_eq!(cutoff(&[3.0], &p), 0.0);
        let t1 = Test1;
        // x1 halfway through its band [2, 2.2]; everything else interior.
        assert!((cutoff(&[2.1, 0.2, 0.2, 1.0], &t1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_count_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_uniform(&Oracle1d::default(), 0, &mut rng).is_err());
    }

    #[test]
    fn wrap_matches_product_rule() {
        let w = Wrap {
            length: Jet {
                value: 2.0,
                grad: vec![1.0, -1.0],
                lap: 3.0,
            },
            offset: Jet {
                value: 1.0,
                grad: vec![0.5, 0.0],
                lap: -1.0,
            },
        };
        let n = Jet {
            value: 0.5,
            grad: vec![2.0, 4.0],
            lap: 1.0,
        };
        let j = w.apply(&n);
        assert_eq!(j.value, 2.0);
        assert_eq!(j.grad, vec![0.5 + 4.0 + 0.5, -0.5 + 8.0]);
        // 3·0.5 + 2(2 − 4) + 2·1 − 1
        assert_eq!(j.lap, 1.5 - 4.0 + 2.0 - 1.0);
    }

    #[test]
    fn lookup_by_name() {
        assert_eq!(by_name("test1", None).unwrap().name(), "test1");
        assert_eq!(by_name("test3", None).unwrap().name(), "test3");
        assert_eq!(by_name("oracle1d", Some(0.1)).unwrap().alpha(), 0.1);
        assert!(by_name("stokes", None).is_err());
    }
}
