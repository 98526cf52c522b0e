//! Validates the analytic objective gradients against central finite
//! differences.

use codesep::basis::build_dct2_basis;
use codesep::coherence::{
    circular_soft_coherence, circular_soft_coherence_with_grad, soft_coherence,
    soft_coherence_with_grad, CodeMask,
};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Mask with entries away from the box bounds so +/- h stays valid.
fn interior_mask(m: usize, t: usize, seed: u64) -> CodeMask<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let values = Array3::from_shape_fn((t, m, m), |_| rng.gen_range(0.1..0.9));
    CodeMask::new(values).unwrap()
}

fn fd_check<Obj, Grad>(obj: Obj, grad_fn: Grad, label: &str)
where
    Obj: Fn(&CodeMask<f64>) -> f64,
    Grad: Fn(&CodeMask<f64>) -> (f64, Array3<f64>),
{
    let (m, t) = (4usize, 2usize);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mask = interior_mask(m, t, 7000 + seed);
        let (_, grad) = grad_fn(&mask);
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1e-12);
        for fi in 0..t {
            for r in 0..m {
                for c in 0..m {
                    let mut plus = mask.values().clone();
                    plus[[fi, r, c]] += h;
                    let mut minus = mask.values().clone();
                    minus[[fi, r, c]] -= h;
                    let fd = (obj(&CodeMask::new(plus).unwrap())
                        - obj(&CodeMask::new(minus).unwrap()))
                        / (2.0 * h);
                    let rel = (fd - grad[[fi, r, c]]).abs() / scale;
                    worst = worst.max(rel);
                    assert!(
                        rel < 1e-6,
                        "{label} seed={seed} entry ({fi},{r},{c}): analytic {} vs fd {fd}, rel {rel}",
                        grad[[fi, r, c]]
                    );
                }
            }
        }
    }
    println!("{label}: worst relative deviation {worst:.3e}");
}

#[test]
fn plain_gradient_matches_finite_differences() {
    let dict = build_dct2_basis::<f64>(4).unwrap();
    let theta = 1000.0;
    fd_check(
        |mask| soft_coherence(mask, &dict, theta).unwrap(),
        |mask| soft_coherence_with_grad(mask, &dict, theta).unwrap(),
        "plain",
    );
}

#[test]
fn circular_gradient_matches_finite_differences() {
    let dict = build_dct2_basis::<f64>(4).unwrap();
    let theta = 1000.0;
    fd_check(
        |mask| circular_soft_coherence(mask, &dict, theta).unwrap(),
        |mask| circular_soft_coherence_with_grad(mask, &dict, theta).unwrap(),
        "circular",
    );
}
