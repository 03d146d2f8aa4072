//! Fully connected networks with flat parameter storage.
//!
//! Parameters are laid out layer by layer, each layer as its weight matrix
//! (`out × in`, row-major) followed by its bias vector.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Element-wise activation applied after every hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
    /// `z²`; mostly useful for building networks with known derivatives.
    Square,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Square => "square",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "square" => Ok(Activation::Square),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
            Activation::Square => z * z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    sizes: Vec<usize>,
    activation: Activation,
    seed: u64,
    params: Vec<f64>,
}

/// Tape handles for one network's weights and biases.
#[derive(Debug, Clone)]
pub struct NetVars {
    weights: Vec<Var>,
    biases: Vec<Var>,
    lens: Vec<(usize, usize)>,
}

/// Value, spatial gradient and Laplacian of a scalar network on a batch,
/// each as a `B×1` node.
#[derive(Debug, Clone)]
pub struct JetVars {
    pub value: Var,
    pub grad: Vec<Var>,
    pub lap: Var,
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least two layer sizes, got {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("layer sizes must be positive: {sizes:?}")));
    }
    Ok(())
}

/// Number of parameters of a network with the given layer sizes.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Builds a network with weights uniform in `±sqrt(6/(fan_in+fan_out))` and
/// zero biases, deterministic in `seed`.
pub fn mlp_init(sizes: &[usize], activation: Activation, seed: u64) -> Result<Network> {
    validate_sizes(sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(param_count(sizes));
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-a..a)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(Network {
        sizes: sizes.to_vec(),
        activation,
        seed,
        params,
    })
}

impl Network {
    /// Network with every parameter zero, so it computes `f(x) = 0`.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Network {
            sizes: sizes.to_vec(),
            activation,
            seed: 0,
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(
        sizes: &[usize],
        activation: Activation,
        seed: u64,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        if params.len() != param_count(sizes) {
            return Err(Error::Shape(format!(
                "{} parameters for layer sizes {sizes:?} (expected {})",
                params.len(),
                param_count(sizes)
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(Network {
            sizes: sizes.to_vec(),
            activation,
            seed,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
        let o = self.offset(layer);
        ArrayView2::from_shape((fo, fi), &self.params[o..o + fi * fo]).expect("layout")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (fi, fo) = (self.sizes[layer], self.sizes[layer + 1]);
        let o = self.offset(layer) + fi * fo;
        ArrayView1::from(&self.params[o..o + fo])
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {cols} coordinates, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
        Ok(self.forward_batch(&x)?.into_raw_vec_and_offset().0)
    }

    /// Outputs for a batch of inputs, one per row.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let last = self.num_layers() - 1;
        let mut h = x.clone();
        for l in 0..=last {
            let mut z = h.dot(&self.weight(l).t());
            z += &self.bias(l);
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            h = z;
        }
        Ok(h)
    }

    fn require_scalar(&self) -> Result<()> {
        if self.output_dim() != 1 {
            return Err(Error::Contract(format!(
                "derivative requested of a network with {} outputs; differentiate components separately",
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Gradient of a scalar network with respect to its input.
    pub fn grad_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.require_scalar()?;
        self.check_input(input.len())?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = tape.param(Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row"));
        let y = self.forward_tape(&mut tape, &vars, x)?;
        let g = tape.backward(y)?;
        Ok(g.get(x)
            .map(|g| g.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; input.len()]))
    }

    /// Sum of second derivatives along `spatial_indices`.
    pub fn laplacian(&self, input: &[f64], spatial_indices: &[usize]) -> Result<f64> {
        self.require_scalar()?;
        self.check_input(input.len())?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
        let jet = self.jet_tape(&mut tape, &vars, &x, spatial_indices)?;
        Ok(tape.scalar(jet.lap))
    }

    /// Records the parameters as leaves; `trainable` decides whether they
    /// receive gradients.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let mut weights = Vec::with_capacity(self.num_layers());
        let mut biases = Vec::with_capacity(self.num_layers());
        let lens = self
            .sizes
            .windows(2)
            .map(|w| (w[0] * w[1], w[1]))
            .collect();
        for l in 0..self.num_layers() {
            let w = self.weight(l).to_owned();
            let b = self.bias(l).to_owned().insert_axis(ndarray::Axis(0));
            if trainable {
                weights.push(tape.param(w));
                biases.push(tape.param(b));
            } else {
                weights.push(tape.constant(w));
                biases.push(tape.constant(b));
            }
        }
        NetVars {
            weights,
            biases,
            lens,
        }
    }

    fn activate(&self, tape: &mut Tape, z: Var) -> Var {
        match self.activation {
            Activation::Tanh => tape.tanh(z),
            Activation::Identity => z,
            Activation::Square => tape.square(z),
        }
    }

    /// Forward pass on the tape for a `B×in` node.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &NetVars, x: Var) -> Result<Var> {
        let last = self.num_layers() - 1;
        let mut h = x;
        for l in 0..=last {
            let z = tape.matmul_t(h, vars.weights[l])?;
            let z = tape.add(z, vars.biases[l])?;
            h = if l < last { self.activate(tape, z) } else { z };
        }
        Ok(h)
    }

    /// First and second activation derivatives as nodes. `None` means
    /// identically zero; `Some(Err(k))` means the constant `k`.
    fn derivs(&self, tape: &mut Tape, z: Var, a: Var) -> (Option<Var>, Option<std::result::Result<Var, f64>>) {
        match self.activation {
            Activation::Tanh => {
                let a2 = tape.square(a);
                let neg = tape.scale(a2, -1.0);
                let s1 = tape.offset(neg, 1.0);
                let as1 = tape.mul(a, s1).expect("same shape");
                let s2 = tape.scale(as1, -2.0);
                (Some(s1), Some(Ok(s2)))
            }
            Activation::Identity => (None, None),
            Activation::Square => (Some(tape.scale(z, 2.0)), Some(Err(2.0))),
        }
    }

    /// Propagates value, directional derivatives along the input coordinates
    /// `dirs`, and their summed second derivatives through the network.
    ///
    /// The input batch is a constant. The result nodes depend on the
    /// parameters, so a reverse sweep yields parameter gradients of any loss
    /// built from them.
    pub fn jet_tape(
        &self,
        tape: &mut Tape,
        vars: &NetVars,
        x: &Array2<f64>,
        dirs: &[usize],
    ) -> Result<JetVars> {
        self.require_scalar()?;
        self.check_input(x.ncols())?;
        if let Some(&bad) = dirs.iter().find(|&&k| k >= self.input_dim()) {
            return Err(Error::Shape(format!(
                "direction index {bad} out of range for input dimension {}",
                self.input_dim()
            )));
        }
        let batch = x.nrows();
        let last = self.num_layers() - 1;
        let xin = tape.constant(x.clone());
        let mut h = xin;
        // Tangents of the first layer are rows of W shared by the whole batch.
        let mut d: Vec<Var> = dirs
            .iter()
            .map(|&k| {
                let mut e = Array2::zeros((1, self.input_dim()));
                e[[0, k]] = 1.0;
                tape.constant(e)
            })
            .collect();
        let mut lap: Option<Var> = None;

        for l in 0..=last {
            let w = vars.weights[l];
            let z = tape.matmul_t(h, w)?;
            let z = tape.add(z, vars.biases[l])?;
            let dz: Vec<Var> = d
                .iter()
                .map(|&dk| tape.matmul_t(dk, w))
                .collect::<Result<_>>()?;
            let lz = match lap {
                Some(lv) => Some(tape.matmul_t(lv, w)?),
                None => None,
            };
            if l == last {
                h = z;
                d = dz;
                lap = lz;
                break;
            }
            let a = self.activate(tape, z);
            let (s1, s2) = self.derivs(tape, z, a);
            let mut new_lap = match (s1, lz) {
                (Some(s1), Some(lz)) => Some(tape.mul(s1, lz)?),
                (None, Some(lz)) => Some(lz),
                _ => None,
            };
            if let (Some(s2), false) = (s2, dz.is_empty()) {
                let mut sq = tape.square(dz[0]);
                for &dk in &dz[1..] {
                    let q = tape.square(dk);
                    sq = tape.add(sq, q)?;
                }
                let curv = match s2 {
                    Ok(s2) => tape.mul(s2, sq)?,
                    Err(k) => tape.scale(sq, k),
                };
                new_lap = Some(match new_lap {
                    Some(nl) if tape.value(nl).nrows() >= tape.value(curv).nrows() => {
                        tape.add(nl, curv)?
                    }
                    Some(nl) => tape.add(curv, nl)?,
                    None => curv,
                });
            }
            d = match s1 {
                Some(s1) => dz
                    .iter()
                    .map(|&dk| tape.mul(s1, dk))
                    .collect::<Result<_>>()?,
                None => dz,
            };
            lap = new_lap;
            h = a;
        }
        let grad = d
            .into_iter()
            .map(|g| self.expand(tape, g, batch))
            .collect::<Result<Vec<_>>>()?;
        let lap = match lap {
            Some(lv) => self.expand(tape, lv, batch)?,
            None => tape.constant(Array2::zeros((batch, 1))),
        };
        Ok(JetVars {
            value: h,
            grad,
            lap,
        })
    }

    /// Broadcasts a shared `1×n` row node to `batch` rows.
    fn expand(&self, tape: &mut Tape, v: Var, batch: usize) -> Result<Var> {
        if tape.value(v).nrows() == batch {
            return Ok(v);
        }
        let zeros = tape.constant(Array2::zeros((batch, tape.value(v).ncols())));
        tape.add(zeros, v)
    }
}

impl NetVars {
    /// Number of scalar parameters covered.
    pub fn param_count(&self) -> usize {
        self.lens.iter().map(|(w, b)| w + b).sum()
    }

    /// Flattened parameter gradient in the network's layout; parameters the
    /// output does not depend on get zero.
    pub fn flat_gradient(&self, grads: &Gradients, out: &mut [f64]) {
        let mut at = 0;
        for ((w, b), &(nw, nb)) in self.weights.iter().zip(&self.biases).zip(&self.lens) {
            for (v, n) in [(w, nw), (b, nb)] {
                let dst = &mut out[at..at + n];
                match grads.get(*v) {
                    Some(g) => dst.iter_mut().zip(g.iter()).for_each(|(o, x)| *o = *x),
                    None => dst.fill(0.0),
                }
                at += n;
            }
        }
    }
}
