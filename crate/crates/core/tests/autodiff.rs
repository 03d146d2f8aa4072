//! Tape derivatives against central differences on random tanh networks.

use std::time::Instant;

use ocp_core::diffcore::verify::{derivative_errors, random_case};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CASES: usize = 100;
const GRAD_TOL: f64 = 1e-6;
const LAP_TOL: f64 = 1e-4;

#[test]
fn random_networks_match_central_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 4];
    for case in 0..CASES {
        let (net, x, spatial) = random_case(&mut rng, case as u64);
        let e = derivative_errors(&net, &x, &spatial);
        let errs = [e.grad_input, e.grad_params, e.laplacian, e.laplacian_params];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        assert!(errs[0] < GRAD_TOL, "case {case}: input gradient rel err {:e}", errs[0]);
        assert!(errs[1] < GRAD_TOL, "case {case}: parameter gradient rel err {:e}", errs[1]);
        assert!(errs[2] < LAP_TOL, "case {case}: Laplacian rel err {:e}", errs[2]);
        assert!(errs[3] < GRAD_TOL, "case {case}: Laplacian parameter gradient rel err {:e}", errs[3]);
    }
    let secs = start.elapsed().as_secs_f64();
    println!("worst rel errors {worst:?} in {secs:.1}s");
    assert!(secs < 60.0, "autodiff suite took {secs:.1}s");
}
