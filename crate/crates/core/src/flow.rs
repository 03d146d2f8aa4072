//! Bounded normalizing flow used as a residual-driven sampler.
//!
//! A point `x ∈ B` is mapped to `u = logit((x − lo)/(hi − lo))` and then
//! through `K` blocks of (fixed rotation, affine coupling, actnorm) to a
//! latent `z` with a standard normal prior. Sampling runs the blocks in
//! reverse and squashes with the logistic function, so every sample lies
//! inside the open box and the density integrates to one over it.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::checkpoint::{decode, encode, FORMAT_VERSION};
use crate::diffcore::{mlp_init, Activation, Adam, NetVars, Network, Tape, Var};
use crate::error::{Error, Result};
use crate::problems::Interval;
use crate::seeds;

/// Shape of a flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Outer blocks `K`, each opened by a fixed rotation.
    pub blocks: usize,
    /// Coupling layers `L` per block.
    pub layers: usize,
    /// Width of each conditioner hidden layer.
    pub hidden: usize,
    /// Hidden layers per conditioner.
    pub depth: usize,
    /// Bound on the log-scale of each coupling, `|s| < scale_cap`.
    pub scale_cap: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            blocks: 4,
            layers: 2,
            hidden: 32,
            depth: 2,
            scale_cap: 3.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.layers == 0 || self.hidden == 0 || self.depth == 0 {
            return Err(Error::Range("flow blocks, layers, hidden and depth must be positive".into()));
        }
        if !(self.scale_cap > 0.0 && self.scale_cap.is_finite()) {
            return Err(Error::Range(format!("flow scale cap {} must be positive", self.scale_cap)));
        }
        Ok(())
    }
}

/// Column split of one coupling layer: `cond` columns feed the conditioner
/// and `trans` columns are scaled and shifted.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Split {
    cond: (usize, usize),
    trans: (usize, usize),
    /// Conditioned columns come first in the layout.
    cond_first: bool,
}

/// The first `⌈d/2⌉` columns condition the rest; odd layers mirror this.
/// In one dimension the conditioner sees a constant.
fn split(dim: usize, layer: usize) -> Split {
    if dim == 1 {
        return Split {
            cond: (0, 0),
            trans: (0, 1),
            cond_first: true,
        };
    }
    let a = dim.div_ceil(2);
    if layer % 2 == 0 {
        Split {
            cond: (0, a),
            trans: (a, dim - a),
            cond_first: true,
        }
    } else {
        Split {
            cond: (dim - a, a),
            trans: (0, dim - a),
            cond_first: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    /// `None` is the identity.
    rotation: Option<Array2<f64>>,
    couplings: Vec<Network>,
    shift: Vec<f64>,
    log_scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    config: FlowConfig,
    seed: u64,
    blocks: Vec<Block>,
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian rows.
fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::zeros((dim, dim));
        let mut ok = true;
        for i in 0..dim {
            let mut v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for j in 0..i {
                let r = q.row(j);
                let d = r.dot(&v);
                v.scaled_add(-d, &r);
            }
            let n = v.dot(&v).sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            q.row_mut(i).assign(&(v / n));
        }
        if ok {
            return q;
        }
    }
}

fn log_sigmoid(u: f64) -> f64 {
    // −softplus(−u)
    if u > 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Tape variables of one block.
struct BlockVars {
    nets: Vec<NetVars>,
    shift: Var,
    log_scale: Var,
}

fn column(v: impl IntoIterator<Item = f64>) -> Array2<f64> {
    let v: Vec<f64> = v.into_iter().collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column")
}

impl Flow {
    /// An untrained flow on the box `bounds`. Coupling outputs start at
    /// zero and actnorm at the identity, so the initial density is the
    /// logistic image of the standard normal.
    pub fn new(bounds: &[Interval], config: FlowConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if bounds.is_empty() {
            return Err(Error::Config("flow needs at least one dimension".into()));
        }
        if let Some(b) = bounds.iter().find(|b| !(b.hi > b.lo) || !b.lo.is_finite() || !b.hi.is_finite()) {
            return Err(Error::Config(format!("degenerate flow box side [{}, {}]", b.lo, b.hi)));
        }
        let dim = bounds.len();
        let mut rng = seeds::rng(seed, seeds::FLOW_INIT);
        let mut blocks = Vec::with_capacity(config.blocks);
        for b in 0..config.blocks {
            let rotation = if b == 0 || dim == 1 { None } else { Some(random_rotation(dim, &mut rng)) };
            let mut couplings = Vec::with_capacity(config.layers);
            for l in 0..config.layers {
                let sp = split(dim, l);
                let mut sizes = vec![sp.cond.1.max(1)];
                sizes.extend(std::iter::repeat_n(config.hidden, config.depth));
                sizes.push(2 * sp.trans.1);
                let mut net = mlp_init(&sizes, Activation::Tanh, rng.random())?;
                let tail = sizes[sizes.len() - 2] * sizes[sizes.len() - 1] + sizes[sizes.len() - 1];
                let mut p = net.params().to_vec();
                let n = p.len();
                p[n - tail..].fill(0.0);
                net.set_params(&p)?;
                couplings.push(net);
            }
            blocks.push(Block {
                rotation,
                couplings,
                shift: vec![0.0; dim],
                log_scale: vec![0.0; dim],
            });
        }
        Ok(Flow {
            dim,
            lo: bounds.iter().map(|b| b.lo).collect(),
            hi: bounds.iter().map(|b| b.hi).collect(),
            config,
            seed,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn bounds(&self) -> Vec<Interval> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| Interval::new(l, h)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.couplings.iter().map(Network::param_count).sum::<usize>() + 2 * self.dim)
            .sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            for c in &b.couplings {
                out.extend_from_slice(c.params());
            }
            out.extend_from_slice(&b.shift);
            out.extend_from_slice(&b.log_scale);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} flow parameters, expected {}",
                params.len(),
                self.param_count()
            )));
        }
        let d = self.dim;
        let mut at = 0;
        for b in &mut self.blocks {
            for c in &mut b.couplings {
                let n = c.param_count();
                c.set_params(&params[at..at + n])?;
                at += n;
            }
            b.shift.copy_from_slice(&params[at..at + d]);
            b.log_scale.copy_from_slice(&params[at + d..at + 2 * d]);
            at += 2 * d;
        }
        Ok(())
    }

    fn check(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim {
            return Err(Error::Shape(format!("{} columns for a flow of dimension {}", x.ncols(), self.dim)));
        }
        Ok(())
    }

    /// Logit coordinates and `log|du/dx|` per row. Rows on or outside the
    /// box get `None`.
    fn unsquash(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<Option<f64>>) {
        let mut u = Array2::zeros(x.dim());
        let mut ld = Vec::with_capacity(x.nrows());
        for (i, row) in x.outer_iter().enumerate() {
            let mut acc = 0.0;
            let mut ok = true;
            for k in 0..self.dim {
                let w = self.hi[k] - self.lo[k];
                let t = (row[k] - self.lo[k]) / w;
                if !(t > 0.0 && t < 1.0) {
                    ok = false;
                    break;
                }
                let v = (t / (1.0 - t)).ln();
                u[[i, k]] = v;
                // dx/du = w σ(u)(1 − σ(u))
                acc -= w.ln() + log_sigmoid(v) + log_sigmoid(-v);
            }
            ld.push(if ok && acc.is_finite() { Some(acc) } else { None });
            if !ok {
                u.row_mut(i).fill(0.0);
            }
        }
        (u, ld)
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<BlockVars> {
        let row = |v: &[f64]| Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row");
        self.blocks
            .iter()
            .map(|b| {
                let (shift, log_scale) = if trainable {
                    (tape.param(row(&b.shift)), tape.param(row(&b.log_scale)))
                } else {
                    (tape.constant(row(&b.shift)), tape.constant(row(&b.log_scale)))
                };
                BlockVars {
                    nets: b.couplings.iter().map(|c| c.register(tape, trainable)).collect(),
                    shift,
                    log_scale,
                }
            })
            .collect()
    }

    /// Records `u ↦ (z, log|dz/du|)` on the tape.
    fn normalize_tape(&self, tape: &mut Tape, vars: &[BlockVars], u: Array2<f64>) -> Result<(Var, Var)> {
        let d = self.dim;
        let rows = u.nrows();
        let cap = self.config.scale_cap;
        let mut h = tape.constant(u);
        let mut logdet = tape.constant(Array2::zeros((rows, 1)));
        let ones = tape.constant(Array2::ones((rows, 1)));
        for (b, v) in self.blocks.iter().zip(vars) {
            if let Some(q) = &b.rotation {
                let qv = tape.constant(q.clone());
                h = tape.matmul_t(h, qv)?;
            }
            for (l, (net, nv)) in b.couplings.iter().zip(&v.nets).enumerate() {
                let sp = split(d, l);
                let xa = if sp.cond.1 == 0 { ones } else { tape.columns(h, sp.cond.0, sp.cond.1)? };
                let xb = tape.columns(h, sp.trans.0, sp.trans.1)?;
                let out = net.forward_tape(tape, nv, xa)?;
                let m = sp.trans.1;
                let s = tape.columns(out, 0, m)?;
                let t = tape.columns(out, m, m)?;
                let s = tape.scale(s, 1.0 / cap);
                let s = tape.tanh(s);
                let s = tape.scale(s, cap);
                let es = tape.exp(s);
                let yb = tape.mul(xb, es)?;
                let yb = tape.add(yb, t)?;
                h = match (sp.cond.1, sp.cond_first) {
                    (0, _) => yb,
                    (_, true) => tape.concat(&[xa, yb])?,
                    (_, false) => tape.concat(&[yb, xa])?,
                };
                let ls = tape.row_sum(s);
                logdet = tape.add(logdet, ls)?;
            }
            h = tape.add(h, v.shift)?;
            let sc = tape.exp(v.log_scale);
            h = tape.mul(h, sc)?;
            let sl = tape.sum(v.log_scale);
            logdet = tape.add(logdet, sl)?;
        }
        Ok((h, logdet))
    }

    /// `log p̂(x)` on the tape for rows of `u`, given `log|du/dx|`.
    fn log_density_tape(&self, tape: &mut Tape, vars: &[BlockVars], u: Array2<f64>, squash: &Array2<f64>) -> Result<Var> {
        let (z, ld) = self.normalize_tape(tape, vars, u)?;
        let z2 = tape.square(z);
        let z2 = tape.row_sum(z2);
        let lp = tape.scale(z2, -0.5);
        let lp = tape.offset(lp, -(self.dim as f64) * HALF_LOG_2PI);
        let lp = tape.add(lp, ld)?;
        let sq = tape.constant(squash.clone());
        tape.add(lp, sq)
    }

    /// Latent image of points strictly inside the box and `log|det dz/dx|`
    /// per row. Rows on or outside the box give a Domain error.
    pub fn to_latent(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check(x)?;
        let (u, sq) = self.unsquash(x);
        if let Some(i) = sq.iter().position(Option::is_none) {
            return Err(Error::Domain(format!("point {} is not inside the flow box", x.row(i))));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let (z, ld) = self.normalize_tape(&mut tape, &vars, u)?;
        let logdet = tape.value(ld).iter().zip(&sq).map(|(l, s)| l + s.unwrap_or(0.0)).collect();
        Ok((tape.value(z).clone(), logdet))
    }

    /// Inverse of [`Flow::to_latent`] with `log|det dx/dz|` per row.
    pub fn from_latent(&self, z: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        self.check(z)?;
        let d = self.dim;
        let cap = self.config.scale_cap;
        let mut h = z.clone();
        let mut logdet = vec![0.0; z.nrows()];
        for b in self.blocks.iter().rev() {
            for (k, (&sh, &ls)) in b.shift.iter().zip(&b.log_scale).enumerate() {
                h.column_mut(k).mapv_inplace(|v| v * (-ls).exp() - sh);
            }
            let lsum: f64 = b.log_scale.iter().sum();
            logdet.iter_mut().for_each(|l| *l -= lsum);
            for (l, net) in b.couplings.iter().enumerate().rev() {
                let sp = split(d, l);
                let xa = if sp.cond.1 == 0 {
                    Array2::ones((h.nrows(), 1))
                } else {
                    h.slice(s![.., sp.cond.0..sp.cond.0 + sp.cond.1]).to_owned()
                };
                let out = net.forward_batch(&xa)?;
                let m = sp.trans.1;
                for i in 0..h.nrows() {
                    for k in 0..m {
                        let s = cap * (out[[i, k]] / cap).tanh();
                        let t = out[[i, m + k]];
                        let c = sp.trans.0 + k;
                        h[[i, c]] = (h[[i, c]] - t) * (-s).exp();
                        logdet[i] -= s;
                    }
                }
            }
            if let Some(q) = &b.rotation {
                h = h.dot(q);
            }
        }
        for (i, mut row) in h.outer_iter_mut().enumerate() {
            for k in 0..d {
                let w = self.hi[k] - self.lo[k];
                let u = row[k];
                logdet[i] += w.ln() + log_sigmoid(u) + log_sigmoid(-u);
                row[k] = self.lo[k] + w * sigmoid(u);
            }
        }
        Ok((h, logdet))
    }

    /// `log p̂(x)`; `−∞` on or outside the box.
    pub fn log_density(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        self.check(x)?;
        let (u, sq) = self.unsquash(x);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let sqc = column(sq.iter().map(|s| s.unwrap_or(0.0)));
        let lp = self.log_density_tape(&mut tape, &vars, u, &sqc)?;
        Ok(tape
            .value(lp)
            .iter()
            .zip(&sq)
            .map(|(l, s)| if s.is_some() { *l } else { f64::NEG_INFINITY })
            .collect())
    }

    /// `count` samples with their log densities.
    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Result<(Array2<f64>, Vec<f64>)> {
        let z = Array2::from_shape_fn((count, self.dim), |_| rng.sample::<f64, _>(StandardNormal));
        let (x, ld) = self.from_latent(&z)?;
        let lp = z
            .outer_iter()
            .zip(&ld)
            .map(|(r, l)| -0.5 * r.dot(&r) - self.dim as f64 * HALF_LOG_2PI - l)
            .collect();
        Ok((x, lp))
    }

    /// Importance-weighted cross entropy `−(1/M) Σ r̂(xᵢ) log p̂(xᵢ) / q(xᵢ)`
    /// over a batch `x` drawn from a proposal with log density `log_q`,
    /// and its parameter gradient.
    pub fn cross_entropy(&self, x: &Array2<f64>, target: &[f64], log_q: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let m = x.nrows();
        if target.len() != m || log_q.len() != m {
            return Err(Error::Shape("target and proposal densities must match the batch".into()));
        }
        if let Some(v) = target.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Numeric(format!("target density {v} is not finite and non-negative")));
        }
        if let Some(v) = log_q.iter().find(|v| v.is_nan() || **v == f64::NEG_INFINITY) {
            return Err(Error::Numeric(format!("proposal log density {v} at a batch point")));
        }
        let (u, sq) = self.unsquash(x);
        let keep: Vec<usize> = (0..m).filter(|&i| target[i] > 0.0 && sq[i].is_some()).collect();
        let mut grad = vec![0.0; self.param_count()];
        if keep.is_empty() {
            return Ok((0.0, grad));
        }
        let u = u.select(Axis(0), &keep);
        let sqc = column(keep.iter().map(|&i| sq[i].unwrap_or(0.0)));
        let w = column(keep.iter().map(|&i| -target[i] * (-log_q[i]).exp() / m as f64));
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("importance weight overflow".into()));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, true);
        let lp = self.log_density_tape(&mut tape, &vars, u, &sqc)?;
        let wv = tape.constant(w);
        let weighted = tape.mul(lp, wv)?;
        let loss = tape.sum(weighted);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric("cross entropy is not finite".into()));
        }
        let g = tape.backward(loss)?;
        let mut at = 0;
        for (b, v) in self.blocks.iter().zip(&vars) {
            for (c, nv) in b.couplings.iter().zip(&v.nets) {
                let n = c.param_count();
                nv.flat_gradient(&g, &mut grad[at..at + n]);
                at += n;
            }
            for var in [v.shift, v.log_scale] {
                let dst = &mut grad[at..at + self.dim];
                match g.get(var) {
                    Some(gv) => dst.iter_mut().zip(gv.iter()).for_each(|(o, x)| *o = *x),
                    None => dst.fill(0.0),
                }
                at += self.dim;
            }
        }
        Ok((value, grad))
    }

    /// Fits the flow to the density proportional to `target` with Adam on
    /// [`Flow::cross_entropy`], drawing a fresh batch from the proposal at
    /// every step. The proposal is a frozen copy of the flow taken at the
    /// start and, when `opts.refresh > 0`, re-taken every `refresh` steps.
    /// On a non-finite loss the last good parameters are restored and the
    /// error is returned. Returns the loss per step.
    pub fn train_cross_entropy(
        &mut self,
        target: &mut dyn FnMut(&Array2<f64>) -> Result<Vec<f64>>,
        opts: &FlowTraining,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        opts.validate()?;
        let mut adam = Adam::new(opts.learning_rate, self.param_count());
        let mut proposal = self.clone();
        let mut history = Vec::with_capacity(opts.steps);
        for step in 0..opts.steps {
            if opts.refresh > 0 && step > 0 && step % opts.refresh == 0 {
                proposal = self.clone();
            }
            let (x, lq) = proposal.sample(opts.batch, rng)?;
            let r = target(&x)?;
            if r.len() != x.nrows() {
                return Err(Error::Shape("target returned the wrong number of values".into()));
            }
            let (loss, grad) = self.cross_entropy(&x, &r, &lq)?;
            history.push(loss);
            let good = self.params();
            let mut p = good.clone();
            adam.update(&mut p, &grad)?;
            if p.iter().any(|v| !v.is_finite()) {
                self.set_params(&good)?;
                return Err(Error::Numeric(format!("flow parameters left the finite range at step {step}")));
            }
            self.set_params(&p)?;
        }
        Ok(history)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = FlowManifest {
            format_version: FORMAT_VERSION,
            kind: "flow".into(),
            dim: self.dim,
            box_lo: self.lo.clone(),
            box_hi: self.hi.clone(),
            split: SPLIT_PATTERN.into(),
            seed: self.seed,
            param_count: self.param_count(),
            config: self.config.clone(),
        };
        encode(&manifest, &self.params())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, params): (FlowManifest, Vec<f64>) = decode(bytes)?;
        if m.format_version != FORMAT_VERSION || m.kind != "flow" || m.split != SPLIT_PATTERN {
            return Err(Error::Integrity(format!(
                "not a supported flow checkpoint (kind {}, version {}, split {})",
                m.kind, m.format_version, m.split
            )));
        }
        if m.box_lo.len() != m.dim || m.box_hi.len() != m.dim {
            return Err(Error::Integrity("flow box does not match its dimension".into()));
        }
        let bounds: Vec<Interval> = m.box_lo.iter().zip(&m.box_hi).map(|(&l, &h)| Interval::new(l, h)).collect();
        let mut f = Flow::new(&bounds, m.config, m.seed)?;
        if params.len() != m.param_count || params.len() != f.param_count() {
            return Err(Error::Integrity(format!(
                "flow checkpoint holds {} parameters, expected {}",
                params.len(),
                f.param_count()
            )));
        }
        f.set_params(&params)?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Flow::from_bytes(&std::fs::read(path)?)
    }
}

const SPLIT_PATTERN: &str = "ceil-half-alternating";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowManifest {
    format_version: u32,
    kind: String,
    dim: usize,
    box_lo: Vec<f64>,
    box_hi: Vec<f64>,
    split: String,
    seed: u64,
    param_count: usize,
    config: FlowConfig,
}

/// Cross-entropy training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowTraining {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Steps between proposal refreshes; 0 keeps the initial proposal.
    #[serde(default)]
    pub refresh: usize,
}

impl Default for FlowTraining {
    fn default() -> Self {
        FlowTraining {
            steps: 500,
            batch: 1000,
            learning_rate: 1e-4,
            refresh: 0,
        }
    }
}

impl FlowTraining {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Range("flow batch must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Range(format!("flow learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}
