//! Derivative checks against central differences.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{mlp_init, Activation, Network, Tape};

/// Relative errors of the tape derivatives of one network at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeErrors {
    pub grad_input: f64,
    pub grad_params: f64,
    /// Relative to the summed magnitude of the pure second derivatives, so a
    /// Laplacian that happens to cancel does not inflate the ratio.
    pub laplacian: f64,
    /// Parameter gradient of the Laplacian.
    pub laplacian_params: f64,
}

/// Random scalar tanh network with 1 to 6 inputs and 1 to 4 hidden layers,
/// a point in `[-1, 1]^d` and a nonempty subset of input directions.
pub fn random_case(rng: &mut ChaCha8Rng, seed: u64) -> (Network, Vec<f64>, Vec<usize>) {
    let input = rng.random_range(1..=6);
    let depth = rng.random_range(1..=4);
    let mut sizes = vec![input];
    sizes.extend((0..depth).map(|_| rng.random_range(3..=20)));
    sizes.push(1);
    let mut net = mlp_init(&sizes, Activation::Tanh, seed).expect("valid sizes");
    // Nonzero biases so no layer sits at the symmetric point of tanh.
    let params: Vec<f64> = net.params().iter().map(|w| w + rng.random_range(-0.3..0.3)).collect();
    net.set_params(&params).expect("same length");
    let x: Vec<f64> = (0..input).map(|_| rng.random_range(-1.0..1.0)).collect();
    let spatial: Vec<usize> = (0..input).filter(|_| rng.random_bool(0.7)).collect();
    let spatial = if spatial.is_empty() { vec![0] } else { spatial };
    (net, x, spatial)
}

fn f(net: &Network, x: &[f64]) -> f64 {
    net.forward(x).expect("checked shapes")[0]
}

fn rel(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    num / scale.max(f64::MIN_POSITIVE)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares every derivative the tape provides with central differences.
pub fn derivative_errors(net: &Network, x: &[f64], spatial: &[usize]) -> DerivativeErrors {
    let h = 1e-5;
    let g = net.grad_input(x).expect("checked shapes");
    let g_fd: Vec<f64> = (0..x.len())
        .map(|k| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[k] += h;
            b[k] -= h;
            (f(net, &a) - f(net, &b)) / (2.0 * h)
        })
        .collect();

    // Parameter gradient of the output through a reverse sweep.
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let xin = tape.constant(Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("checked shapes"));
    let out = net.forward_tape(&mut tape, &vars, xin).expect("checked shapes");
    let grads = tape.backward(out).expect("checked shapes");
    let mut gp = vec![0.0; net.param_count()];
    vars.flat_gradient(&grads, &mut gp);
    let gp_fd = param_fd(net, h, |n| f(n, x));

    // Second differences along the spatial coordinates.
    let h2 = 1e-4;
    let f0 = f(net, x);
    let mut lap_fd = 0.0;
    let mut scale = 0.0;
    for &k in spatial {
        let (mut a, mut b) = (x.to_vec(), x.to_vec());
        a[k] += h2;
        b[k] -= h2;
        let d2 = (f(net, &a) - 2.0 * f0 + f(net, &b)) / (h2 * h2);
        lap_fd += d2;
        scale += d2.abs();
    }
    let lap = net.laplacian(x, spatial).expect("checked shapes");

    // Parameter gradient of the Laplacian through the jet tape.
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, true);
    let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("checked shapes");
    let jet = net.jet_tape(&mut tape, &vars, &xa, spatial).expect("checked shapes");
    let grads = tape.backward(jet.lap).expect("checked shapes");
    let mut gl = vec![0.0; net.param_count()];
    vars.flat_gradient(&grads, &mut gl);
    let gl_fd = param_fd(net, h, |n| n.laplacian(x, spatial).expect("checked shapes"));

    DerivativeErrors {
        grad_input: rel(&g, &g_fd, norm(&g_fd)),
        grad_params: rel(&gp, &gp_fd, norm(&gp_fd)),
        laplacian: (lap - lap_fd).abs() / scale.max(f64::MIN_POSITIVE),
        laplacian_params: rel(&gl, &gl_fd, norm(&gl_fd)),
    }
}

fn param_fd(net: &Network, h: f64, eval: impl Fn(&Network) -> f64) -> Vec<f64> {
    let base = net.params().to_vec();
    let mut probe = net.clone();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p).expect("checked shapes");
            let up = eval(&probe);
            p[i] = base[i] - h;
            probe.set_params(&p).expect("checked shapes");
            let down = eval(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}
