//! Direct-adjoint-looping training of state, adjoint and control networks.
//!
//! One DAL iteration draws a batch, fits the state network to the state
//! equation, the adjoint network to the adjoint equation, freezes the
//! projected-gradient target `u_step = P(û − c·d_uJ)` and fits the control
//! network to it. Every loss is a root mean square of residuals.

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{mlp_init, Activation, Method, NetVars, Network, OptimizerState, Tape, Var};
use crate::error::{Error, Result};
use crate::problems::{ControlKind, ProblemSpec, TrainingSet, Wrap};
use crate::seeds;

/// Rows evaluated per tape.
pub const CHUNK: usize = 512;

/// Hidden layer widths and activation shared by the three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: vec![20; 5],
            activation: Activation::Tanh,
        }
    }
}

impl Architecture {
    fn sizes(&self, input: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend_from_slice(&self.hidden);
        s.push(1);
        s
    }
}

/// The control either comes from its own network or, for the
/// joint-training baseline, from the pointwise optimality map
/// `u = P(−q/α)` applied to the adjoint.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlModel {
    Network(Network),
    OptimalityMap,
}

#[derive(Debug, Clone)]
pub struct SurrogateTriplet {
    pub state: Network,
    pub adjoint: Network,
    pub control: ControlModel,
    pub state_opt: OptimizerState,
    pub adjoint_opt: OptimizerState,
    pub control_opt: OptimizerState,
}

/// Schedule of the DAL loop.
#[derive(Debug, Clone, PartialEq)]
pub struct DalHyperparams {
    /// Step decay `γ ∈ (0, 1]`.
    pub gamma: f64,
    /// Initial step `c⁽⁰⁾`.
    pub c0: f64,
    /// Optimizer epochs per network in the first iteration.
    pub n0: usize,
    /// Epochs added after every iteration.
    pub n_aug: usize,
    /// Number of DAL iterations.
    pub n_ep: usize,
    /// Points per batch.
    pub batch_size: usize,
    /// Sweeps of the y → p → u sequence per iteration.
    pub inner_steps: usize,
    /// Cap on boundary collocation points per batch.
    pub boundary_batch: usize,
    pub method: Method,
    /// Abort when a phase ends above this multiple of its starting loss.
    pub divergence_factor: f64,
}

impl Default for DalHyperparams {
    fn default() -> Self {
        DalHyperparams {
            gamma: 1.0,
            c0: 1.0,
            n0: 50,
            n_aug: 0,
            n_ep: 100,
            batch_size: 1000,
            inner_steps: 1,
            boundary_batch: 4096,
            method: Method::default(),
            divergence_factor: 10.0,
        }
    }
}

impl DalHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Range(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} outside (0, 1]", self.gamma));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return bad(format!("c0 = {} must be positive", self.c0));
        }
        if self.n0 == 0 || self.n_ep == 0 || self.batch_size == 0 || self.inner_steps == 0 || self.boundary_batch == 0 {
            return bad("n0, n_ep, batch_size, inner_steps and boundary_batch must be positive".into());
        }
        if let Method::AdaptiveMoment { lr } = self.method {
            if !(lr > 0.0) {
                return bad(format!("learning rate {lr} must be positive"));
            }
        }
        if !(self.divergence_factor > 1.0) {
            return bad(format!("divergence factor {} must exceed 1", self.divergence_factor));
        }
        Ok(())
    }
}

/// Step size and epoch count carried between DAL iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DalState {
    pub iteration: usize,
    pub c: f64,
    pub n: usize,
}

impl DalState {
    pub fn new(hp: &DalHyperparams) -> Self {
        DalState {
            iteration: 0,
            c: hp.c0,
            n: hp.n0,
        }
    }
}

/// Losses at the end of one DAL iteration, with the step and epoch count
/// that iteration used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DalReport {
    pub iteration: usize,
    pub loss_state: f64,
    pub loss_adjoint: f64,
    pub loss_control: f64,
    pub c: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub report: DalReport,
    pub wall_seconds: f64,
}

/// Per-iteration training log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub const HEADER: &'static str = "epoch,L_s,L_a,L_u,c,n,wall_seconds";

    pub fn last(&self) -> Option<&DalReport> {
        self.rows.last().map(|r| &r.report)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.rows {
            let p = &r.report;
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{},{:.3}",
                p.iteration, p.loss_state, p.loss_adjoint, p.loss_control, p.c, p.n, r.wall_seconds
            )?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Batch constants

/// Length-factor and offset jets of a [`Wrap`] stored column-wise.
#[derive(Debug, Clone)]
struct WrapCols {
    lv: Array2<f64>,
    lg: Vec<Array2<f64>>,
    ll: Array2<f64>,
    ov: Array2<f64>,
    og: Vec<Array2<f64>>,
    ol: Array2<f64>,
}

fn col(v: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = v.into_iter().collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

impl WrapCols {
    fn from_wraps(wraps: &[Wrap], dims: usize) -> Self {
        WrapCols {
            lv: col(wraps.iter().map(|w| w.length.value)),
            lg: (0..dims).map(|k| col(wraps.iter().map(|w| w.length.grad[k]))).collect(),
            ll: col(wraps.iter().map(|w| w.length.lap)),
            ov: col(wraps.iter().map(|w| w.offset.value)),
            og: (0..dims).map(|k| col(wraps.iter().map(|w| w.offset.grad[k]))).collect(),
            ol: col(wraps.iter().map(|w| w.offset.lap)),
        }
    }

    fn rows(&self, a: usize, b: usize) -> Self {
        let r = |m: &Array2<f64>| m.slice(s![a..b, ..]).to_owned();
        WrapCols {
            lv: r(&self.lv),
            lg: self.lg.iter().map(r).collect(),
            ll: r(&self.ll),
            ov: r(&self.ov),
            og: self.og.iter().map(r).collect(),
            ol: r(&self.ol),
        }
    }

    fn value(&self, n: &Array2<f64>) -> Array2<f64> {
        &self.lv * n + &self.ov
    }
}

fn rows(m: &Array2<f64>, a: usize, b: usize) -> Array2<f64> {
    m.slice(s![a..b, ..]).to_owned()
}

fn matrix(rows_: impl IntoIterator<Item = Vec<f64>>, width: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows_.into_iter().flatten().collect();
    let n = flat.len() / width.max(1);
    Array2::from_shape_vec((n, width), flat).expect("row-major batch")
}

fn chunks(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(CHUNK).map(move |a| (a, (a + CHUNK).min(n)))
}

/// Per-point constants of a set of control points.
#[derive(Debug, Clone)]
struct ControlPoints {
    points: Vec<Vec<f64>>,
    /// Control-network inputs.
    feats: Array2<f64>,
    lo: Array2<f64>,
    hi: Array2<f64>,
    /// State/adjoint inputs at the control points.
    state_feats: Array2<f64>,
    adj_wrap: WrapCols,
    data: Array2<f64>,
}

impl ControlPoints {
    fn new(problem: &dyn ProblemSpec, points: Vec<Vec<f64>>) -> Self {
        let dims = problem.laplacian_dims();
        let feats = matrix(points.iter().map(|p| problem.control_features(p)), problem.control_feature_dim());
        let bounds: Vec<(f64, f64)> = points.iter().map(|p| problem.control_bounds(p)).collect();
        let state_feats = matrix(points.iter().map(|p| problem.features(p)), problem.feature_dim());
        let adj: Vec<Wrap> = points.iter().map(|p| problem.adjoint_wrap(p)).collect();
        ControlPoints {
            feats,
            lo: col(bounds.iter().map(|b| b.0)),
            hi: col(bounds.iter().map(|b| b.1)),
            state_feats,
            adj_wrap: WrapCols::from_wraps(&adj, dims),
            data: col(points.iter().map(|p| problem.boundary_data(p))),
            points,
        }
    }

    fn len(&self) -> usize {
        self.points.len()
    }
}

fn state_wraps(problem: &dyn ProblemSpec, points: &[Vec<f64>]) -> Option<WrapCols> {
    let dims = problem.laplacian_dims();
    let wraps: Option<Vec<Wrap>> = points.iter().map(|p| problem.state_wrap(p)).collect();
    wraps.map(|w| WrapCols::from_wraps(&w, dims))
}

/// Constants of one collocation batch.
#[derive(Debug, Clone)]
pub struct Batch {
    points: Vec<Vec<f64>>,
    feats: Array2<f64>,
    state_wrap: Option<WrapCols>,
    adj_wrap: WrapCols,
    source: Array2<f64>,
    desired: Array2<f64>,
    control: ControlPoints,
    distributed: bool,
}

impl Batch {
    /// Precomputes features, wraps and data for `points`. For boundary
    /// control the first `boundary_cap` points are projected onto the
    /// boundary to form the control points.
    pub fn new(problem: &dyn ProblemSpec, points: Vec<Vec<f64>>, boundary_cap: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("empty collocation batch".into()));
        }
        for p in &points {
            if !problem.contains(p) {
                return Err(Error::Contract(format!("collocation point {p:?} outside the domain")));
            }
        }
        let dims = problem.laplacian_dims();
        let distributed = problem.control_kind() == ControlKind::Distributed;
        let state_wrap = state_wraps(problem, &points);
        if state_wrap.is_none() && distributed {
            return Err(Error::Unsupported(
                "penalized state boundary conditions need a boundary control".into(),
            ));
        }
        let adj: Vec<Wrap> = points.iter().map(|p| problem.adjoint_wrap(p)).collect();
        let control_points: Vec<Vec<f64>> = if distributed {
            points.clone()
        } else {
            points.iter().take(boundary_cap).map(|p| problem.control_point(p)).collect()
        };
        Ok(Batch {
            feats: matrix(points.iter().map(|p| problem.features(p)), problem.feature_dim()),
            state_wrap,
            adj_wrap: WrapCols::from_wraps(&adj, dims),
            source: col(points.iter().map(|p| problem.state_source(p))),
            desired: col(points.iter().map(|p| problem.desired_state(p))),
            control: ControlPoints::new(problem, control_points),
            points,
            distributed,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn control_points(&self) -> &[Vec<f64>] {
        &self.control.points
    }
}

/// Draws `m` distinct indices of the set in random order (all of them,
/// shuffled, if `m ≥ |S|`).
pub fn draw_batch(set: &TrainingSet, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    if set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let k = m.min(set.len());
    Ok(sample(rng, set.len(), k).into_iter().map(|i| set.point(i).to_vec()).collect())
}

// ---------------------------------------------------------------------------
// Non-tape evaluation

fn values(net: &Network, feats: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((feats.nrows(), 1));
    for (a, b) in chunks(feats.nrows()) {
        let v = net.forward_batch(&rows(feats, a, b))?;
        out.slice_mut(s![a..b, ..]).assign(&v);
    }
    Ok(out)
}

/// Value, spatial gradient and Laplacian of a (wrapped) scalar network.
struct FieldJets {
    value: Array2<f64>,
    grad: Vec<Array2<f64>>,
    lap: Array2<f64>,
}

fn wrapped_jets(net: &Network, feats: &Array2<f64>, wrap: Option<&WrapCols>, dims: usize) -> Result<FieldJets> {
    let n = feats.nrows();
    let mut out = FieldJets {
        value: Array2::zeros((n, 1)),
        grad: vec![Array2::zeros((n, 1)); dims],
        lap: Array2::zeros((n, 1)),
    };
    let dirs: Vec<usize> = (0..dims).collect();
    for (a, b) in chunks(n) {
        let mut tape = Tape::new();
        let vars = net.register(&mut tape, false);
        let w = wrap.map(|w| w.rows(a, b));
        let j = wrapped_jet_tape(&mut tape, net, &vars, &rows(feats, a, b), w.as_ref(), &dirs, true)?;
        out.value.slice_mut(s![a..b, ..]).assign(tape.value(j.value));
        out.lap.slice_mut(s![a..b, ..]).assign(tape.value(j.lap));
        for k in 0..dims {
            out.grad[k].slice_mut(s![a..b, ..]).assign(tape.value(j.grad[k]));
        }
    }
    Ok(out)
}

/// Tape jets of `wrap(N)`: value, gradient (when requested) and Laplacian.
struct WrappedJet {
    value: Var,
    grad: Vec<Var>,
    lap: Var,
}

fn wrapped_jet_tape(
    tape: &mut Tape,
    net: &Network,
    vars: &NetVars,
    feats: &Array2<f64>,
    wrap: Option<&WrapCols>,
    dirs: &[usize],
    want_grad: bool,
) -> Result<WrappedJet> {
    let j = net.jet_tape(tape, vars, feats, dirs)?;
    let Some(w) = wrap else {
        return Ok(WrappedJet {
            value: j.value,
            grad: if want_grad { j.grad } else { Vec::new() },
            lap: j.lap,
        });
    };
    let lv = tape.constant(w.lv.clone());
    let value = {
        let a = tape.mul(j.value, lv)?;
        let ov = tape.constant(w.ov.clone());
        tape.add(a, ov)?
    };
    // Δ(lN + o) = Δl·N + 2∇l·∇N + l·ΔN + Δo
    let ll = tape.constant(w.ll.clone());
    let mut lap = tape.mul(j.value, ll)?;
    let t = tape.mul(j.lap, lv)?;
    lap = tape.add(lap, t)?;
    for k in 0..dirs.len() {
        let lg = tape.constant(&w.lg[k] * 2.0);
        let t = tape.mul(j.grad[k], lg)?;
        lap = tape.add(lap, t)?;
    }
    let ol = tape.constant(w.ol.clone());
    lap = tape.add(lap, ol)?;
    let mut grad = Vec::new();
    if want_grad {
        for k in 0..dirs.len() {
            let lg = tape.constant(w.lg[k].clone());
            let a = tape.mul(j.value, lg)?;
            let b = tape.mul(j.grad[k], lv)?;
            let s = tape.add(a, b)?;
            let og = tape.constant(w.og[k].clone());
            grad.push(tape.add(s, og)?);
        }
    }
    Ok(WrappedJet { value, grad, lap })
}

fn wrapped_value_tape(tape: &mut Tape, net: &Network, vars: &NetVars, feats: &Array2<f64>, wrap: Option<&WrapCols>) -> Result<Var> {
    let x = tape.constant(feats.clone());
    let n = net.forward_tape(tape, vars, x)?;
    match wrap {
        None => Ok(n),
        Some(w) => {
            let lv = tape.constant(w.lv.clone());
            let a = tape.mul(n, lv)?;
            let ov = tape.constant(w.ov.clone());
            tape.add(a, ov)
        }
    }
}

fn clamp_cols(v: &mut Array2<f64>, lo: &Array2<f64>, hi: &Array2<f64>) {
    ndarray::Zip::from(v).and(lo).and(hi).for_each(|v, &l, &h| *v = v.clamp(l, h));
}

impl SurrogateTriplet {
    /// Fresh networks for `problem`, seeded from `seed`.
    pub fn new(problem: &dyn ProblemSpec, arch: &Architecture, method: Method, seed: u64) -> Result<Self> {
        let state = mlp_init(&arch.sizes(problem.feature_dim()), arch.activation, seeds::derive(seed, seeds::STATE_INIT))?;
        let adjoint = mlp_init(&arch.sizes(problem.feature_dim()), arch.activation, seeds::derive(seed, seeds::ADJOINT_INIT))?;
        let control = mlp_init(
            &arch.sizes(problem.control_feature_dim()),
            arch.activation,
            seeds::derive(seed, seeds::CONTROL_INIT),
        )?;
        Ok(Self::from_networks(state, adjoint, ControlModel::Network(control), method))
    }

    pub fn from_networks(state: Network, adjoint: Network, control: ControlModel, method: Method) -> Self {
        let nu = match &control {
            ControlModel::Network(n) => n.param_count(),
            ControlModel::OptimalityMap => 0,
        };
        SurrogateTriplet {
            state_opt: OptimizerState::new(method, state.param_count()),
            adjoint_opt: OptimizerState::new(method, adjoint.param_count()),
            control_opt: OptimizerState::new(method, nu),
            state,
            adjoint,
            control,
        }
    }

    fn check_points(problem: &dyn ProblemSpec, points: &[Vec<f64>]) -> Result<()> {
        if let Some(p) = points.iter().find(|p| p.len() != problem.dim()) {
            return Err(Error::Shape(format!("point {p:?} has the wrong dimension for {}", problem.name())));
        }
        Ok(())
    }

    /// Wrapped state values.
    pub fn state_at(&self, problem: &dyn ProblemSpec, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        Self::check_points(problem, points)?;
        let feats = matrix(points.iter().map(|p| problem.features(p)), problem.feature_dim());
        let n = values(&self.state, &feats)?;
        let v = match state_wraps(problem, points) {
            Some(w) => w.value(&n),
            None => n,
        };
        Ok(v.into_raw_vec_and_offset().0)
    }

    /// Wrapped adjoint values.
    pub fn adjoint_at(&self, problem: &dyn ProblemSpec, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        Self::check_points(problem, points)?;
        let feats = matrix(points.iter().map(|p| problem.features(p)), problem.feature_dim());
        let n = values(&self.adjoint, &feats)?;
        let adj: Vec<Wrap> = points.iter().map(|p| problem.adjoint_wrap(p)).collect();
        let w = WrapCols::from_wraps(&adj, problem.laplacian_dims());
        Ok(w.value(&n).into_raw_vec_and_offset().0)
    }

    fn control_cols(&self, problem: &dyn ProblemSpec, cp: &ControlPoints) -> Result<Array2<f64>> {
        match &self.control {
            ControlModel::Network(net) => values(net, &cp.feats),
            ControlModel::OptimalityMap => {
                let q = self.sensitivity_cols(problem, cp)?;
                let mut u = q * (-1.0 / problem.alpha());
                clamp_cols(&mut u, &cp.lo, &cp.hi);
                Ok(u)
            }
        }
    }

    /// Adjoint part `q` of `d_uJ = αu + q` at the control points.
    fn sensitivity_cols(&self, problem: &dyn ProblemSpec, cp: &ControlPoints) -> Result<Array2<f64>> {
        let dims = problem.laplacian_dims();
        let j = wrapped_jets(&self.adjoint, &cp.state_feats, Some(&cp.adj_wrap), dims)?;
        Ok(col(cp.points.iter().enumerate().map(|(i, p)| {
            let g: Vec<f64> = (0..dims).map(|k| j.grad[k][[i, 0]]).collect();
            problem.adjoint_sensitivity(p, j.value[[i, 0]], &g)
        })))
    }

    /// Control values at control points.
    pub fn control_at(&self, problem: &dyn ProblemSpec, control_points: &[Vec<f64>]) -> Result<Vec<f64>> {
        Self::check_points(problem, control_points)?;
        let cp = ControlPoints::new(problem, control_points.to_vec());
        Ok(self.control_cols(problem, &cp)?.into_raw_vec_and_offset().0)
    }

    /// Reduced gradient `d_uJ = αû + q` at control points.
    pub fn reduced_gradient_at(&self, problem: &dyn ProblemSpec, control_points: &[Vec<f64>]) -> Result<Vec<f64>> {
        Self::check_points(problem, control_points)?;
        let cp = ControlPoints::new(problem, control_points.to_vec());
        let u = self.control_cols(problem, &cp)?;
        let q = self.sensitivity_cols(problem, &cp)?;
        Ok((u * problem.alpha() + q).into_raw_vec_and_offset().0)
    }

    /// `P(û − c·d_uJ)` at control points.
    pub fn u_step_at(&self, problem: &dyn ProblemSpec, control_points: &[Vec<f64>], c: f64) -> Result<Vec<f64>> {
        Self::check_points(problem, control_points)?;
        let cp = ControlPoints::new(problem, control_points.to_vec());
        Ok(self.u_step_cols(problem, &cp, c)?.into_raw_vec_and_offset().0)
    }

    fn u_step_cols(&self, problem: &dyn ProblemSpec, cp: &ControlPoints, c: f64) -> Result<Array2<f64>> {
        let u = self.control_cols(problem, cp)?;
        let q = self.sensitivity_cols(problem, cp)?;
        let mut t = &u - &((&u * problem.alpha() + q) * c);
        if t.iter().any(|v| !v.is_finite()) {
            let i = t.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::Numeric(format!("u_step not finite at {:?}", cp.points[i])));
        }
        clamp_cols(&mut t, &cp.lo, &cp.hi);
        Ok(t)
    }

    /// State and adjoint residuals `(r_s, r_a)` at interior points.
    /// A boundary control does not enter `r_s`.
    pub fn residuals_at(&self, problem: &dyn ProblemSpec, points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        Self::check_points(problem, points)?;
        let dims = problem.laplacian_dims();
        let feats = matrix(points.iter().map(|p| problem.features(p)), problem.feature_dim());
        let sw = state_wraps(problem, points);
        let adj: Vec<Wrap> = points.iter().map(|p| problem.adjoint_wrap(p)).collect();
        let aw = WrapCols::from_wraps(&adj, dims);
        let y = wrapped_jets(&self.state, &feats, sw.as_ref(), dims)?;
        let p = wrapped_jets(&self.adjoint, &feats, Some(&aw), dims)?;
        let u = if problem.control_kind() == ControlKind::Distributed {
            let cps: Vec<Vec<f64>> = points.iter().map(|q| problem.control_point(q)).collect();
            self.control_cols(problem, &ControlPoints::new(problem, cps))?
        } else {
            Array2::zeros((points.len(), 1))
        };
        let f = col(points.iter().map(|q| problem.state_source(q)));
        let yd = col(points.iter().map(|q| problem.desired_state(q)));
        let rs = -&y.lap - &f - &u;
        let ra = -&p.lap - &(&y.value - &yd);
        Ok((rs.into_raw_vec_and_offset().0, ra.into_raw_vec_and_offset().0))
    }

    pub fn control_network(&self) -> Option<&Network> {
        match &self.control {
            ControlModel::Network(n) => Some(n),
            ControlModel::OptimalityMap => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Losses

/// Sum of squares of one residual group, its size and its parameter gradient.
#[derive(Debug, Clone)]
struct Term {
    sum: f64,
    count: usize,
    grad: Vec<f64>,
}

/// `sqrt(Σ sum_t / count_t)` and its gradient.
fn rms(terms: &[Term], n_params: usize) -> (f64, Vec<f64>) {
    let ms: f64 = terms.iter().map(|t| t.sum / t.count as f64).sum();
    let l = ms.sqrt();
    let mut g = vec![0.0; n_params];
    if l > 0.0 {
        for t in terms {
            let w = 1.0 / (2.0 * l * t.count as f64);
            g.iter_mut().zip(&t.grad).for_each(|(g, d)| *g += w * d);
        }
    }
    (l, g)
}

fn sum_squares(tape: &mut Tape, r: Var) -> Var {
    let sq = tape.square(r);
    tape.sum(sq)
}

/// Accumulates one term over row chunks. `build` records the chunk's
/// sum-of-squares node and returns it with the trainable variables.
fn term<F>(rows_: usize, n_params: usize, want_grad: bool, mut build: F) -> Result<Term>
where
    F: FnMut(&mut Tape, usize, usize) -> Result<(Var, Vec<NetVars>)>,
{
    let mut t = Term {
        sum: 0.0,
        count: rows_,
        grad: vec![0.0; n_params],
    };
    let mut buf = vec![0.0; n_params];
    for (a, b) in chunks(rows_) {
        let mut tape = Tape::new();
        let (ss, vars) = build(&mut tape, a, b)?;
        t.sum += tape.scalar(ss);
        if want_grad {
            let g = tape.backward(ss)?;
            let mut at = 0;
            for v in &vars {
                let n = v.param_count();
                v.flat_gradient(&g, &mut buf[at..at + n]);
                at += n;
            }
            t.grad.iter_mut().zip(&buf).for_each(|(t, b)| *t += b);
        } else if !t.sum.is_finite() {
            return Err(Error::Numeric("non-finite residual".into()));
        }
    }
    Ok(t)
}

fn non_finite_point(batch_points: &[Vec<f64>], r: &Array2<f64>, what: &str) -> Result<()> {
    if let Some(i) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what} residual not finite at {:?}", batch_points[i])));
    }
    Ok(())
}

/// `L_s` for state parameters `theta` with the control frozen at `u_int`
/// (interior, distributed) and `u_bd` (control points, boundary control).
struct StateLoss<'a> {
    problem: &'a dyn ProblemSpec,
    batch: &'a Batch,
    u_int: Array2<f64>,
    u_bd: Array2<f64>,
    net: Network,
}

impl StateLoss<'_> {
    fn eval(&mut self, theta: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.net.set_params(theta)?;
        let np = theta.len();
        let dims: Vec<usize> = (0..self.problem.laplacian_dims()).collect();
        let (net, batch) = (&self.net, self.batch);
        // Interior rhs: f (+ u for a distributed control).
        let rhs = if batch.distributed { &batch.source + &self.u_int } else { batch.source.clone() };
        let interior = term(batch.len(), np, want_grad, |tape, a, b| {
            let vars = net.register(tape, true);
            let w = batch.state_wrap.as_ref().map(|w| w.rows(a, b));
            let j = wrapped_jet_tape(tape, net, &vars, &rows(&batch.feats, a, b), w.as_ref(), &dims, false)?;
            let neg = tape.scale(j.lap, -1.0);
            let c = tape.constant(rows(&rhs, a, b));
            let r = tape.sub(neg, c)?;
            Ok((sum_squares(tape, r), vec![vars]))
        })?;
        let mut terms = vec![interior];
        if batch.state_wrap.is_none() {
            let cp = &batch.control;
            let target = &self.u_bd + &cp.data;
            terms.push(term(cp.len(), np, want_grad, |tape, a, b| {
                let vars = net.register(tape, true);
                let y = wrapped_value_tape(tape, net, &vars, &rows(&cp.state_feats, a, b), None)?;
                let c = tape.constant(rows(&target, a, b));
                let r = tape.sub(y, c)?;
                Ok((sum_squares(tape, r), vec![vars]))
            })?);
        }
        Ok(rms(&terms, np))
    }
}

/// `L_a` with the state frozen at `y`.
struct AdjointLoss<'a> {
    problem: &'a dyn ProblemSpec,
    batch: &'a Batch,
    misfit: Array2<f64>,
    net: Network,
}

impl AdjointLoss<'_> {
    fn eval(&mut self, theta: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.net.set_params(theta)?;
        let np = theta.len();
        let dims: Vec<usize> = (0..self.problem.laplacian_dims()).collect();
        let (net, batch, misfit) = (&self.net, self.batch, &self.misfit);
        let t = term(batch.len(), np, want_grad, |tape, a, b| {
            let vars = net.register(tape, true);
            let w = batch.adj_wrap.rows(a, b);
            let j = wrapped_jet_tape(tape, net, &vars, &rows(&batch.feats, a, b), Some(&w), &dims, false)?;
            let neg = tape.scale(j.lap, -1.0);
            let c = tape.constant(rows(misfit, a, b));
            let r = tape.sub(neg, c)?;
            Ok((sum_squares(tape, r), vec![vars]))
        })?;
        Ok(rms(&[t], np))
    }
}

/// `L_u` against frozen targets.
struct ControlLoss<'a> {
    feats: &'a Array2<f64>,
    target: Array2<f64>,
    net: Network,
}

impl ControlLoss<'_> {
    fn eval(&mut self, theta: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        self.net.set_params(theta)?;
        let np = theta.len();
        let (net, feats, target) = (&self.net, self.feats, &self.target);
        let t = term(feats.nrows(), np, want_grad, |tape, a, b| {
            let vars = net.register(tape, true);
            let x = tape.constant(rows(feats, a, b));
            let u = net.forward_tape(tape, &vars, x)?;
            let c = tape.constant(rows(target, a, b));
            let r = tape.sub(u, c)?;
            Ok((sum_squares(tape, r), vec![vars]))
        })?;
        Ok(rms(&[t], np))
    }
}

/// Frozen quantities for the state phase.
fn frozen_control(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, batch: &Batch) -> Result<(Array2<f64>, Array2<f64>)> {
    let u = triplet.control_cols(problem, &batch.control)?;
    if batch.distributed {
        Ok((u, Array2::zeros((0, 1))))
    } else {
        Ok((Array2::zeros((batch.len(), 1)), u))
    }
}

fn state_misfit(triplet: &SurrogateTriplet, batch: &Batch) -> Result<Array2<f64>> {
    let n = values(&triplet.state, &batch.feats)?;
    let y = match &batch.state_wrap {
        Some(w) => w.value(&n),
        None => n,
    };
    Ok(y - &batch.desired)
}

/// `L_s` of the current triplet on a batch.
pub fn loss_state(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, batch: &Batch) -> Result<f64> {
    let (u_int, u_bd) = frozen_control(triplet, problem, batch)?;
    let mut l = StateLoss {
        problem,
        batch,
        u_int,
        u_bd,
        net: triplet.state.clone(),
    };
    let v = l.eval(triplet.state.params(), false)?.0;
    if !v.is_finite() {
        let (rs, _) = triplet.residuals_at(problem, &batch.points)?;
        non_finite_point(&batch.points, &col(rs), "state")?;
    }
    Ok(v)
}

/// `L_a` of the current triplet on a batch.
pub fn loss_adjoint(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, batch: &Batch) -> Result<f64> {
    let mut l = AdjointLoss {
        problem,
        batch,
        misfit: state_misfit(triplet, batch)?,
        net: triplet.adjoint.clone(),
    };
    let v = l.eval(triplet.adjoint.params(), false)?.0;
    if !v.is_finite() {
        let (_, ra) = triplet.residuals_at(problem, &batch.points)?;
        non_finite_point(&batch.points, &col(ra), "adjoint")?;
    }
    Ok(v)
}

/// Projected-gradient targets at the batch's control points.
pub fn compute_u_step(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, batch: &Batch, c: f64) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::Contract(format!("step size {c} must be positive")));
    }
    Ok(triplet.u_step_cols(problem, &batch.control, c)?.into_raw_vec_and_offset().0)
}

/// `L_u` of the control network against `targets` at the batch's control points.
pub fn loss_control(triplet: &SurrogateTriplet, targets: &[f64], batch: &Batch) -> Result<f64> {
    let Some(net) = triplet.control_network() else {
        return Err(Error::Unsupported("control is given by the optimality map".into()));
    };
    if targets.len() != batch.control.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} control points",
            targets.len(),
            batch.control.len()
        )));
    }
    let mut l = ControlLoss {
        feats: &batch.control.feats,
        target: col(targets.iter().copied()),
        net: net.clone(),
    };
    Ok(l.eval(net.params(), false)?.0)
}

// ---------------------------------------------------------------------------
// Training

/// Runs `epochs` optimizer iterations; returns (initial, final) loss.
fn train_phase(
    name: &str,
    params: &mut Vec<f64>,
    opt: &mut OptimizerState,
    epochs: usize,
    divergence: f64,
    mut eval: impl FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
) -> Result<(f64, f64)> {
    opt.begin_phase();
    let (initial, _) = eval(params, false)?;
    if !initial.is_finite() {
        return Err(Error::Numeric(format!("{name} loss is not finite at phase start")));
    }
    let mut best = params.clone();
    let mut last = initial;
    let mut obj = |x: &[f64], g: &mut [f64]| -> Result<f64> {
        let (l, d) = eval(x, true)?;
        g.copy_from_slice(&d);
        Ok(l)
    };
    for _ in 0..epochs {
        let r = opt.step(params, &mut obj)?;
        if r.loss.is_finite() && r.loss <= last {
            best.copy_from_slice(params);
        }
        if r.stalled {
            break;
        }
        last = r.loss;
    }
    drop(obj);
    let (fin, _) = eval(params, false)?;
    if !fin.is_finite() || fin > divergence * initial {
        params.copy_from_slice(&best);
        return Err(Error::Divergence(format!(
            "{name} loss went from {initial:e} to {fin:e} within one phase"
        )));
    }
    Ok((initial, fin))
}

/// One DAL iteration on a fresh batch drawn from `set`.
pub fn dal_iterate(
    triplet: &mut SurrogateTriplet,
    problem: &dyn ProblemSpec,
    hp: &DalHyperparams,
    set: &TrainingSet,
    state: &mut DalState,
    rng: &mut ChaCha8Rng,
) -> Result<DalReport> {
    let points = draw_batch(set, hp.batch_size, rng)?;
    let batch = Batch::new(problem, points, hp.boundary_batch)?;
    dal_iterate_on(triplet, problem, hp, &batch, state)
}

/// [`dal_iterate`] on a given batch.
pub fn dal_iterate_on(
    triplet: &mut SurrogateTriplet,
    problem: &dyn ProblemSpec,
    hp: &DalHyperparams,
    batch: &Batch,
    state: &mut DalState,
) -> Result<DalReport> {
    let Some(control_net) = triplet.control_network().cloned() else {
        return Err(Error::Unsupported("DAL iteration needs a control network".into()));
    };
    let mut control_net = control_net;
    let n = state.n;
    let mut report = DalReport {
        iteration: state.iteration,
        loss_state: f64::NAN,
        loss_adjoint: f64::NAN,
        loss_control: f64::NAN,
        c: state.c,
        n,
    };
    for _ in 0..hp.inner_steps {
        // State.
        let (u_int, u_bd) = frozen_control(triplet, problem, batch)?;
        let mut sl = StateLoss {
            problem,
            batch,
            u_int,
            u_bd,
            net: triplet.state.clone(),
        };
        let mut theta = triplet.state.params().to_vec();
        let (_, ls) = train_phase("state", &mut theta, &mut triplet.state_opt, n, hp.divergence_factor, |p, g| {
            sl.eval(p, g)
        })?;
        triplet.state.set_params(&theta)?;

        // Adjoint.
        let mut al = AdjointLoss {
            problem,
            batch,
            misfit: state_misfit(triplet, batch)?,
            net: triplet.adjoint.clone(),
        };
        let mut theta = triplet.adjoint.params().to_vec();
        let (_, la) = train_phase("adjoint", &mut theta, &mut triplet.adjoint_opt, n, hp.divergence_factor, |p, g| {
            al.eval(p, g)
        })?;
        triplet.adjoint.set_params(&theta)?;

        // Control, against frozen targets.
        let target = triplet.u_step_cols(problem, &batch.control, state.c)?;
        let mut cl = ControlLoss {
            feats: &batch.control.feats,
            target,
            net: control_net.clone(),
        };
        let mut theta = control_net.params().to_vec();
        let (_, lu) = train_phase("control", &mut theta, &mut triplet.control_opt, n, hp.divergence_factor, |p, g| {
            cl.eval(p, g)
        })?;
        control_net.set_params(&theta)?;
        triplet.control = ControlModel::Network(control_net.clone());

        report.loss_state = ls;
        report.loss_adjoint = la;
        report.loss_control = lu;
    }
    state.c *= hp.gamma;
    state.n += hp.n_aug;
    state.iteration += 1;
    Ok(report)
}

/// Runs `hp.n_ep` DAL iterations on a fixed set, starting from fresh
/// networks seeded by `seed`.
pub fn run_aonn(
    problem: &dyn ProblemSpec,
    hp: &DalHyperparams,
    arch: &Architecture,
    set: &TrainingSet,
    seed: u64,
) -> Result<(SurrogateTriplet, TrainingLog)> {
    hp.validate()?;
    if set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut triplet = SurrogateTriplet::new(problem, arch, hp.method, seed)?;
    let mut state = DalState::new(hp);
    let mut rng = seeds::rng(seed, seeds::BATCHES);
    let mut log = TrainingLog::default();
    continue_aonn(&mut triplet, problem, hp, set, &mut state, &mut rng, &mut log, hp.n_ep)?;
    Ok((triplet, log))
}

/// Runs `iterations` further DAL iterations, appending to `log`.
#[allow(clippy::too_many_arguments)]
pub fn continue_aonn(
    triplet: &mut SurrogateTriplet,
    problem: &dyn ProblemSpec,
    hp: &DalHyperparams,
    set: &TrainingSet,
    state: &mut DalState,
    rng: &mut ChaCha8Rng,
    log: &mut TrainingLog,
    iterations: usize,
) -> Result<()> {
    let start = Instant::now();
    for _ in 0..iterations {
        let report = dal_iterate(triplet, problem, hp, set, state, rng)?;
        log.rows.push(LogRow {
            report,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(())
}

/// Losses of the current triplet on all of `set` (chunked, no training).
pub fn evaluate_losses(
    triplet: &SurrogateTriplet,
    problem: &dyn ProblemSpec,
    set: &TrainingSet,
    c: f64,
    boundary_cap: usize,
) -> Result<(f64, f64, f64)> {
    let batch = Batch::new(problem, set.iter().map(<[f64]>::to_vec).collect(), boundary_cap)?;
    let ls = loss_state(triplet, problem, &batch)?;
    let la = loss_adjoint(triplet, problem, &batch)?;
    let lu = match triplet.control_network() {
        Some(_) => {
            let t = compute_u_step(triplet, problem, &batch, c)?;
            loss_control(triplet, &t, &batch)?
        }
        None => 0.0,
    };
    Ok((ls, la, lu))
}

// ---------------------------------------------------------------------------
// Joint baseline

/// `L_s + L_a` with the control eliminated through the optimality map, as a
/// function of the concatenated state and adjoint parameters.
struct JointLoss<'a> {
    problem: &'a dyn ProblemSpec,
    batch: &'a Batch,
    y: Network,
    p: Network,
}

impl JointLoss<'_> {
    fn eval(&mut self, theta: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let ny = self.y.param_count();
        self.y.set_params(&theta[..ny])?;
        self.p.set_params(&theta[ny..])?;
        let np = theta.len();
        let dims: Vec<usize> = (0..self.problem.laplacian_dims()).collect();
        let (y, p, batch, problem) = (&self.y, &self.p, self.batch, self.problem);
        let alpha = problem.alpha();
        let cp = &batch.control;
        // Control at a set of rows from the adjoint jets there.
        let control = |tape: &mut Tape, pv: &NetVars, feats: &Array2<f64>, wrap: &WrapCols, pts: &[Vec<f64>], lo: &Array2<f64>, hi: &Array2<f64>| -> Result<Var> {
            let j = wrapped_jet_tape(tape, p, pv, feats, Some(wrap), &dims, true)?;
            let q = sensitivity_tape(tape, problem, pts, &j)?;
            let u = tape.scale(q, -1.0 / alpha);
            tape.clamp(u, lo, hi)
        };

        let mut state_terms = Vec::new();
        let mut adjoint_terms = Vec::new();
        // Interior: state and adjoint residuals share the chunk.
        let mut s_int = Term { sum: 0.0, count: batch.len(), grad: vec![0.0; np] };
        let mut a_int = Term { sum: 0.0, count: batch.len(), grad: vec![0.0; np] };
        let mut buf = vec![0.0; np];
        for (a, b) in chunks(batch.len()) {
            let mut tape = Tape::new();
            let yv = y.register(&mut tape, true);
            let pv = p.register(&mut tape, true);
            let feats = rows(&batch.feats, a, b);
            let sw = batch.state_wrap.as_ref().map(|w| w.rows(a, b));
            let aw = batch.adj_wrap.rows(a, b);
            let yj = wrapped_jet_tape(&mut tape, y, &yv, &feats, sw.as_ref(), &dims, false)?;
            let pj = wrapped_jet_tape(&mut tape, p, &pv, &feats, Some(&aw), &dims, false)?;
            let neg = tape.scale(yj.lap, -1.0);
            let f = tape.constant(rows(&batch.source, a, b));
            let mut rs = tape.sub(neg, f)?;
            if batch.distributed {
                let lo = rows(&cp.lo, a, b);
                let hi = rows(&cp.hi, a, b);
                let u = control(&mut tape, &pv, &feats, &aw, &batch.points[a..b], &lo, &hi)?;
                rs = tape.sub(rs, u)?;
            }
            let ss = sum_squares(&mut tape, rs);
            let negp = tape.scale(pj.lap, -1.0);
            let yd = tape.constant(rows(&batch.desired, a, b));
            let mis = tape.sub(yj.value, yd)?;
            let ra = tape.sub(negp, mis)?;
            let sa = sum_squares(&mut tape, ra);
            s_int.sum += tape.scalar(ss);
            a_int.sum += tape.scalar(sa);
            if want_grad {
                for (node, t) in [(ss, &mut s_int), (sa, &mut a_int)] {
                    let g = tape.backward(node)?;
                    yv.flat_gradient(&g, &mut buf[..ny]);
                    pv.flat_gradient(&g, &mut buf[ny..]);
                    t.grad.iter_mut().zip(&buf).for_each(|(t, b)| *t += b);
                }
            }
        }
        state_terms.push(s_int);
        adjoint_terms.push(a_int);
        if batch.state_wrap.is_none() {
            state_terms.push(term(cp.len(), np, want_grad, |tape, a, b| {
                let yv = y.register(tape, true);
                let pv = p.register(tape, true);
                let feats = rows(&cp.state_feats, a, b);
                let yb = wrapped_value_tape(tape, y, &yv, &feats, None)?;
                let u = control(tape, &pv, &feats, &cp.adj_wrap.rows(a, b), &cp.points[a..b], &rows(&cp.lo, a, b), &rows(&cp.hi, a, b))?;
                let d = tape.constant(rows(&cp.data, a, b));
                let t = tape.sub(yb, u)?;
                let r = tape.sub(t, d)?;
                Ok((sum_squares(tape, r), vec![yv, pv]))
            })?);
        }
        let (ls, gs) = rms(&state_terms, np);
        let (la, ga) = rms(&adjoint_terms, np);
        Ok((ls + la, gs.iter().zip(&ga).map(|(a, b)| a + b).collect()))
    }
}

/// `q` on the tape from wrapped adjoint jets at control points. Only the
/// two linear forms used by the built-in problems are supported: `q = p`
/// (distributed) and `q = −∇p·n` (boundary).
fn sensitivity_tape(tape: &mut Tape, problem: &dyn ProblemSpec, points: &[Vec<f64>], j: &WrappedJet) -> Result<Var> {
    let dims = j.grad.len();
    // Probe the linear form: q = a·p + Σ b_k ∂_k p, coefficients per point.
    let mut a = Vec::with_capacity(points.len());
    let mut bs = vec![Vec::with_capacity(points.len()); dims];
    let zero = vec![0.0; dims];
    for pt in points {
        a.push(problem.adjoint_sensitivity(pt, 1.0, &zero));
        for (k, bk) in bs.iter_mut().enumerate() {
            let mut e = zero.clone();
            e[k] = 1.0;
            bk.push(problem.adjoint_sensitivity(pt, 0.0, &e));
        }
    }
    let ac = tape.constant(col(a));
    let mut q = tape.mul(j.value, ac)?;
    for (k, bk) in bs.into_iter().enumerate() {
        let bc = tape.constant(col(bk));
        let t = tape.mul(j.grad[k], bc)?;
        q = tape.add(q, t)?;
    }
    Ok(q)
}

/// `L_s + L_a` of a triplet whose control is the optimality map.
pub fn loss_joint(triplet: &SurrogateTriplet, problem: &dyn ProblemSpec, batch: &Batch) -> Result<f64> {
    let mut jl = JointLoss {
        problem,
        batch,
        y: triplet.state.clone(),
        p: triplet.adjoint.clone(),
    };
    let theta: Vec<f64> = triplet.state.params().iter().chain(triplet.adjoint.params()).copied().collect();
    Ok(jl.eval(&theta, false)?.0)
}

/// One joint training round: `epochs` optimizer iterations on `L_s + L_a`.
/// Returns the final `(L_s + L_a)`.
pub fn joint_iterate_on(
    triplet: &mut SurrogateTriplet,
    problem: &dyn ProblemSpec,
    hp: &DalHyperparams,
    batch: &Batch,
    epochs: usize,
) -> Result<f64> {
    let mut jl = JointLoss {
        problem,
        batch,
        y: triplet.state.clone(),
        p: triplet.adjoint.clone(),
    };
    let ny = triplet.state.param_count();
    let mut theta: Vec<f64> = triplet.state.params().iter().chain(triplet.adjoint.params()).copied().collect();
    let (_, l) = train_phase("joint", &mut theta, &mut triplet.state_opt, epochs, hp.divergence_factor, |p, g| {
        jl.eval(p, g)
    })?;
    triplet.state.set_params(&theta[..ny])?;
    triplet.adjoint.set_params(&theta[ny..])?;
    Ok(l)
}
