//! Tanh networks that reproduce the Test 3 analytic triple.
//!
//! Every field has the form `scale · (κ₀ + Σ κ_k z_k²) · exp(−10 Σ_{k≥2} z_k²)`
//! in the network features `z`. The networks compute it in three hidden
//! layers:
//!
//! 1. `z_k²` from the symmetric pair `tanh(a + εz) + tanh(a − εz)`, whose odd
//!    terms cancel,
//! 2. the polynomial factor through a near-linear unit `tanh(δA)/δ`, and
//!    `exp(−10s)` as a least-squares combination of tanh ramps,
//! 3. the product from `AB = ((A + B)² − (A − B)²)/4`, squares as in 1.

use nalgebra::{DMatrix, DVector};
use ocp_core::aonn::{ControlModel, SurrogateTriplet};
use ocp_core::diffcore::{Activation, Method, Network};
use ocp_core::problems::test3::ALPHA;

const EPS: f64 = 5e-4;
const SQ_BIAS: f64 = 0.5;
const DELTA: f64 = 1e-4;
/// Ramps of the exponential fit and the range of `s` it covers.
const RAMPS: usize = 80;
const SLOPE: f64 = 32.0;
const S_MAX: f64 = 10.5;

fn tanh2(a: f64) -> f64 {
    let t = a.tanh();
    -2.0 * t * (1.0 - t * t)
}

/// Output weight and bias turning a symmetric pair into `v²`.
fn square_readout() -> (f64, f64) {
    let k = 1.0 / (tanh2(SQ_BIAS) * EPS * EPS);
    (k, -2.0 * SQ_BIAS.tanh() * k)
}

/// Ramps `tanh(w_j s + b_j)` and coefficients `c` with
/// `exp(−10s) ≈ c₀ + Σ c_j tanh(w_j s + b_j)` on `[0, S_MAX]`.
pub struct ExpFit {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn fit_exp() -> ExpFit {
    // Centers follow the decay; past s ≈ 1.8 the target is below 1e-7.
    let centers: Vec<f64> = (0..RAMPS).map(|j| 1.8 * (j as f64 / (RAMPS - 1) as f64).powf(1.6)).collect();
    let w = vec![SLOPE; RAMPS];
    let b: Vec<f64> = centers.iter().zip(&w).map(|(m, w)| -m * w).collect();
    let n = 6000;
    let grid: Vec<f64> = (0..n).map(|i| S_MAX * (i as f64 / (n - 1) as f64).powi(2)).collect();
    let a = DMatrix::from_fn(n, RAMPS + 1, |i, j| if j == 0 { 1.0 } else { (w[j - 1] * grid[i] + b[j - 1]).tanh() });
    let y = DVector::from_iterator(n, grid.iter().map(|s| (-10.0 * s).exp()));
    let c = a.svd(true, true).solve(&y, 1e-13).expect("svd solve");
    ExpFit {
        w,
        b,
        c: c.iter().copied().collect(),
    }
}

impl ExpFit {
    pub fn eval(&self, s: f64) -> f64 {
        self.c[0] + self.w.iter().zip(&self.b).zip(&self.c[1..]).map(|((w, b), c)| c * (w * s + b).tanh()).sum::<f64>()
    }
}

/// Dense layer under construction, `out × in` row-major.
#[derive(Default)]
struct Layer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Layer {
    fn unit(&mut self, weights: Vec<f64>, bias: f64) {
        self.w.push(weights);
        self.b.push(bias);
    }
}

/// Network for `scale · (k0 + Σ poly[k]·z_k²) · exp(−10 Σ_{k≥2} z_k²)`
/// over `f` features.
pub fn product_network(f: usize, k0: f64, poly: &[f64], scale: f64, fit: &ExpFit) -> Network {
    let (ro_w, ro_b) = square_readout();

    // Layer 1: a symmetric pair per feature.
    let mut l1 = Layer::default();
    for k in 0..f {
        for sign in [1.0, -1.0] {
            let mut w = vec![0.0; f];
            w[k] = sign * EPS;
            l1.unit(w, SQ_BIAS);
        }
    }
    // z_k² = ro_w·(h_{2k} + h_{2k+1}) + ro_b as a linear form over layer-1
    // outputs: (weights, constant).
    let square = |k: usize| {
        let mut w = vec![0.0; 2 * f];
        w[2 * k] = ro_w;
        w[2 * k + 1] = ro_w;
        (w, ro_b)
    };
    let combine = |coef: &[(usize, f64)], konst: f64| {
        let mut w = vec![0.0; 2 * f];
        let mut c = konst;
        for &(k, a) in coef {
            let (sw, sb) = square(k);
            for (acc, v) in w.iter_mut().zip(sw) {
                *acc += a * v;
            }
            c += a * sb;
        }
        (w, c)
    };

    // Layer 2: pass-through of the polynomial factor, then the ramps of s.
    let mut l2 = Layer::default();
    let poly_terms: Vec<(usize, f64)> = poly.iter().copied().enumerate().filter(|(_, a)| *a != 0.0).collect();
    let (pw, pc) = combine(&poly_terms, k0);
    l2.unit(pw.iter().map(|v| DELTA * v).collect(), DELTA * pc);
    let s_terms: Vec<(usize, f64)> = (2..f).map(|k| (k, 1.0)).collect();
    let (sw, sc) = combine(&s_terms, 0.0);
    for (w, b) in fit.w.iter().zip(&fit.b) {
        l2.unit(sw.iter().map(|v| w * v).collect(), w * sc + b);
    }

    // A and B as linear forms over layer-2 outputs.
    let width2 = 1 + fit.w.len();
    let mut a_form = vec![0.0; width2];
    a_form[0] = 1.0 / DELTA;
    let mut b_form = vec![0.0; width2];
    b_form[1..].copy_from_slice(&fit.c[1..]);
    let b_const = fit.c[0];

    // Layer 3: pairs squaring A + B and A − B.
    let mut l3 = Layer::default();
    for sign_b in [1.0, -1.0] {
        for sign in [1.0, -1.0] {
            let w: Vec<f64> = a_form.iter().zip(&b_form).map(|(a, b)| sign * EPS * (a + sign_b * b)).collect();
            l3.unit(w, SQ_BIAS + sign * EPS * sign_b * b_const);
        }
    }
    // Output: (sq(A + B) − sq(A − B)) / 4, scaled.
    let q = 0.25 * scale * ro_w;
    let out_w = vec![q, q, -q, -q];

    let sizes = [f, 2 * f, width2, 4, 1];
    let mut params = Vec::new();
    for layer in [&l1, &l2, &l3] {
        for row in &layer.w {
            params.extend_from_slice(row);
        }
        params.extend_from_slice(&layer.b);
    }
    params.extend_from_slice(&out_w);
    params.push(0.0);
    Network::from_params(&sizes, Activation::Tanh, 0, params).expect("prefit layout")
}

/// State, adjoint and control networks for the Test 3 exact solution,
/// in that problem's feature maps.
pub fn test3_triplet(method: Method) -> SurrogateTriplet {
    let fit = fit_exp();
    let f = 12;
    // y* = ½(1 + z₀² − z₁²)g, p̂_I* = −(α/4)(1 + z₀² − z₁²)g, u* = z₀²g.
    let mut half = vec![0.0; f];
    half[0] = 0.5;
    half[1] = -0.5;
    let mut one = vec![0.0; f];
    one[0] = 1.0;
    let state = product_network(f, 0.5, &half, 1.0, &fit);
    let adjoint = product_network(f, 0.5, &half, -0.5 * ALPHA, &fit);
    let control = product_network(f, 0.0, &one, 1.0, &fit);
    SurrogateTriplet::from_networks(state, adjoint, ControlModel::Network(control), method)
}

/// `n` points of Ω_Γ for Test 3: half uniform, half with ξ in
/// `[−0.25, 0.25]^10` where the solution is far from zero.
pub fn test3_points(n: usize, seed: u64) -> Vec<Vec<f64>> {
    use ocp_core::problems::{sample_uniform, Test3};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = sample_uniform(&Test3, n / 2, &mut rng).unwrap().iter().map(<[f64]>::to_vec).collect();
    while out.len() < n {
        let mut p = vec![rng.random_range(0.0..1.0f64).sqrt(), rng.random_range(0.0..std::f64::consts::TAU)];
        p.extend((0..10).map(|_| rng.random_range(-0.25..0.25)));
        out.push(p);
    }
    out
}
