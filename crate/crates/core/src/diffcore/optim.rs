//! Limited-memory BFGS with a strong-Wolfe line search, and Adam.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// A differentiable scalar objective.
pub trait Objective {
    /// Writes the gradient at `params` into `grad` and returns the value.
    fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> Result<f64>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    fn evaluate(&mut self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        self(params, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of one optimizer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss_before: f64,
    pub loss: f64,
    pub evaluations: usize,
    /// The curvature pair was rejected (`s·y ≤ 0`) and not stored.
    pub curvature_skipped: bool,
    /// No further progress is possible from this point.
    pub stalled: bool,
}

/// L-BFGS state. Curvature pairs persist across [`Lbfgs::step`] calls as long
/// as the objective stays the same; call [`Lbfgs::reset`] when it changes.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    cached: Option<(f64, Vec<f64>)>,
    skipped: usize,
    pub max_line_search: usize,
    pub grad_tol: f64,
}

pub const LBFGS_MEMORY: usize = 20;
const C1: f64 = 1e-4;
const C2: f64 = 0.9;

struct Trial {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

impl Default for Lbfgs {
    fn default() -> Self {
        Self::new(LBFGS_MEMORY)
    }
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Lbfgs {
            memory: memory.max(1),
            s: VecDeque::new(),
            y: VecDeque::new(),
            rho: VecDeque::new(),
            cached: None,
            skipped: 0,
            max_line_search: 25,
            grad_tol: 1e-14,
        }
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Stored curvature pairs.
    pub fn pairs(&self) -> usize {
        self.s.len()
    }

    /// Total number of rejected curvature pairs.
    pub fn skipped_updates(&self) -> usize {
        self.skipped
    }

    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
        self.cached = None;
    }

    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let k = self.s.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let a = self.rho[i] * dot(&self.s[i], &q);
            alphas[i] = a;
            q.iter_mut().zip(&self.y[i]).for_each(|(q, y)| *q -= a * y);
        }
        if k > 0 {
            let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let b = self.rho[i] * dot(&self.y[i], &q);
            q.iter_mut()
                .zip(&self.s[i])
                .for_each(|(q, s)| *q += (alphas[i] - b) * s);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One quasi-Newton iteration: direction, line search, curvature update.
    pub fn step(&mut self, params: &mut [f64], obj: &mut dyn Objective) -> Result<StepReport> {
        let n = params.len();
        let mut evaluations = 0;
        let (f0, g0) = match self.cached.take() {
            Some(c) => c,
            None => {
                let mut g = vec![0.0; n];
                let f = obj.evaluate(params, &mut g)?;
                evaluations += 1;
                if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("objective not finite at the current point".into()));
                }
                (f, g)
            }
        };
        let gnorm = norm(&g0);
        if gnorm <= self.grad_tol {
            self.cached = Some((f0, g0));
            return Ok(StepReport {
                loss_before: f0,
                loss: f0,
                evaluations,
                curvature_skipped: false,
                stalled: true,
            });
        }
        let mut d = self.direction(&g0);
        let mut dg0 = dot(&d, &g0);
        if !(dg0 < 0.0) {
            self.s.clear();
            self.y.clear();
            self.rho.clear();
            d = g0.iter().map(|v| -v).collect();
            dg0 = -gnorm * gnorm;
        }
        let alpha0 = if self.s.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let mut trial = vec![0.0; n];
        let mut eval_at = |alpha: f64, evals: &mut usize| -> Result<Trial> {
            for i in 0..n {
                trial[i] = params[i] + alpha * d[i];
            }
            let mut g = vec![0.0; n];
            let f = obj.evaluate(&trial, &mut g)?;
            *evals += 1;
            let dg = dot(&g, &d);
            Ok(Trial { alpha, f, g, dg })
        };

        let found = strong_wolfe(f0, dg0, alpha0, self.max_line_search, &mut |a| {
            eval_at(a, &mut evaluations)
        })?;

        let Some(t) = found else {
            self.s.clear();
            self.y.clear();
            self.rho.clear();
            self.cached = Some((f0, g0));
            return Ok(StepReport {
                loss_before: f0,
                loss: f0,
                evaluations,
                curvature_skipped: false,
                stalled: true,
            });
        };

        let s: Vec<f64> = d.iter().map(|v| t.alpha * v).collect();
        let y: Vec<f64> = t.g.iter().zip(&g0).map(|(a, b)| a - b).collect();
        params.iter_mut().zip(&s).for_each(|(p, s)| *p += s);
        let sy = dot(&s, &y);
        let curvature_skipped = !(sy > 0.0);
        if curvature_skipped {
            self.skipped += 1;
        } else {
            if self.s.len() == self.memory {
                self.s.pop_front();
                self.y.pop_front();
                self.rho.pop_front();
            }
            self.s.push_back(s);
            self.y.push_back(y);
            self.rho.push_back(1.0 / sy);
        }
        self.cached = Some((t.f, t.g));
        Ok(StepReport {
            loss_before: f0,
            loss: t.f,
            evaluations,
            curvature_skipped,
            stalled: false,
        })
    }

    /// Runs up to `iterations` steps, stopping early when stalled.
    /// Returns the final loss.
    pub fn minimize(
        &mut self,
        params: &mut [f64],
        obj: &mut dyn Objective,
        iterations: usize,
    ) -> Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..iterations {
            let r = self.step(params, obj)?;
            last = r.loss;
            if r.stalled {
                break;
            }
        }
        if last.is_nan() {
            let mut g = vec![0.0; params.len()];
            last = obj.evaluate(params, &mut g)?;
        }
        Ok(last)
    }
}

fn finite(t: &Trial) -> bool {
    t.f.is_finite() && t.dg.is_finite()
}

/// Minimizer of the cubic interpolating two points with values and slopes,
/// safeguarded into the interior of the bracket.
fn cubic_min(a: &Trial, b: &Trial) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a, b) } else { (b, a) };
    let d1 = lo.dg + hi.dg - 3.0 * (lo.f - hi.f) / (lo.alpha - hi.alpha);
    let disc = d1 * d1 - lo.dg * hi.dg;
    let width = hi.alpha - lo.alpha;
    let mid = lo.alpha + 0.5 * width;
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = disc.sqrt();
    let x = hi.alpha - width * (hi.dg + d2 - d1) / (hi.dg - lo.dg + 2.0 * d2);
    if !x.is_finite() {
        return mid;
    }
    let margin = 0.1 * width;
    x.clamp(lo.alpha + margin, hi.alpha - margin)
}

/// Strong-Wolfe line search (bracketing then zoom). Returns `None` if no
/// point with sufficient decrease was found within `max_evals`.
fn strong_wolfe(
    f0: f64,
    dg0: f64,
    alpha0: f64,
    max_evals: usize,
    eval: &mut dyn FnMut(f64) -> Result<Trial>,
) -> Result<Option<Trial>> {
    let origin = Trial {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        dg: dg0,
    };
    let armijo = |t: &Trial| t.f <= f0 + C1 * t.alpha * dg0;
    let curvature = |t: &Trial| t.dg.abs() <= -C2 * dg0;

    let mut prev = origin;
    let mut alpha = alpha0;
    let mut best: Option<Trial> = None;
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        let t = eval(alpha)?;
        evals += 1;
        if !finite(&t) {
            // Back off toward the last good point.
            hi = t;
            lo = prev;
            if evals >= max_evals {
                return Ok(best);
            }
            alpha = lo.alpha + 0.1 * (hi.alpha - lo.alpha);
            prev = lo;
            continue;
        }
        if !armijo(&t) || (evals > 1 && t.f >= prev.f) {
            lo = prev;
            hi = t;
            break;
        }
        if curvature(&t) {
            return Ok(Some(t));
        }
        if t.dg >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        if evals >= max_evals {
            return Ok(Some(t));
        }
        let next = (2.0 * t.alpha).min(t.alpha + 1e3 * alpha0.max(t.alpha));
        best = None;
        prev = t;
        alpha = next;
    }
    if armijo(&lo) && lo.alpha > 0.0 {
        best = Some(Trial {
            alpha: lo.alpha,
            f: lo.f,
            g: lo.g.clone(),
            dg: lo.dg,
        });
    }
    // Zoom.
    while evals < max_evals {
        let a = if finite(&hi) {
            cubic_min(&lo, &hi)
        } else {
            lo.alpha + 0.1 * (hi.alpha - lo.alpha)
        };
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let t = eval(a)?;
        evals += 1;
        if !finite(&t) || !armijo(&t) || t.f >= lo.f {
            hi = t;
            continue;
        }
        if curvature(&t) {
            return Ok(Some(t));
        }
        if t.dg * (hi.alpha - lo.alpha) >= 0.0 {
            hi = lo;
        }
        best = Some(Trial {
            alpha: t.alpha,
            f: t.f,
            g: t.g.clone(),
            dg: t.dg,
        });
        lo = t;
    }
    Ok(best)
}

/// Adam with the usual bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Defaults `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn new(lr: f64, dim: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update given a gradient.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer sized for {} parameters, got {} / {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Evaluates the objective once and updates.
    pub fn step(&mut self, params: &mut [f64], obj: &mut dyn Objective) -> Result<StepReport> {
        let mut g = vec![0.0; params.len()];
        let f = obj.evaluate(params, &mut g)?;
        if !f.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        self.update(params, &g)?;
        Ok(StepReport {
            loss_before: f,
            loss: f,
            evaluations: 1,
            curvature_skipped: false,
            stalled: false,
        })
    }
}

/// Which optimizer a network is trained with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    QuasiNewton { memory: usize },
    AdaptiveMoment { lr: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::QuasiNewton {
            memory: LBFGS_MEMORY,
        }
    }
}

/// Per-network optimizer buffers.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    QuasiNewton(Lbfgs),
    AdaptiveMoment(Adam),
}

impl OptimizerState {
    pub fn new(method: Method, dim: usize) -> Self {
        match method {
            Method::QuasiNewton { memory } => OptimizerState::QuasiNewton(Lbfgs::new(memory)),
            Method::AdaptiveMoment { lr } => OptimizerState::AdaptiveMoment(Adam::new(lr, dim)),
        }
    }

    /// Forgets objective-specific state (L-BFGS curvature pairs). Adam
    /// moments are kept.
    pub fn begin_phase(&mut self) {
        if let OptimizerState::QuasiNewton(l) = self {
            l.reset();
        }
    }

    pub fn step(&mut self, params: &mut [f64], obj: &mut dyn Objective) -> Result<StepReport> {
        match self {
            OptimizerState::QuasiNewton(l) => l.step(params, obj),
            OptimizerState::AdaptiveMoment(a) => a.step(params, obj),
        }
    }
}
