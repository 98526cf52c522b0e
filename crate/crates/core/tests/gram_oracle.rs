//! Cross-checks the closed-form coherence kernels against a brute-force
//! reference that explicitly assembles the effective sensing matrix
//! `(phi_1 D | ... | phi_T D)` and normalizes its columns.

use codesep::basis::{build_dct2_basis, Dictionary};
use codesep::coherence::{exact_coherence, gram_entry, CodeMask};
use codesep::optimizer::random_mask;
use ndarray::Array2;

/// Column `(t, j)` of the effective matrix: `phi_t .* d_j`.
fn effective_columns(mask: &CodeMask<f64>, dict: &Dictionary<f64>) -> Array2<f64> {
    let m = mask.side();
    let n = m * m;
    let t = mask.frames();
    let flat = mask.flat();
    let mut cols = Array2::<f64>::zeros((n, n * t));
    for fi in 0..t {
        for j in 0..n {
            for i in 0..n {
                cols[[i, fi * n + j]] = flat[[fi, i]] * dict.atom_value(i, j);
            }
        }
    }
    cols
}

fn brute_force_mu(cols: &Array2<f64>) -> (f64, Array2<f64>) {
    let (n, total) = cols.dim();
    let mut normalized = cols.clone();
    for j in 0..total {
        let norm = normalized.column(j).dot(&normalized.column(j)).sqrt();
        assert!(norm > 0.0);
        for i in 0..n {
            normalized[[i, j]] /= norm;
        }
    }
    let gram = normalized.t().dot(&normalized);
    let mut mu = 0.0f64;
    for i in 0..total {
        for j in 0..total {
            if i != j {
                mu = mu.max(gram[[i, j]].abs());
            }
        }
    }
    (mu, gram)
}

#[test]
fn exact_coherence_and_gram_entry_match_brute_force() {
    let mut checked = 0usize;
    for m in 1..=4usize {
        let dict = build_dct2_basis::<f64>(m).unwrap();
        let n = m * m;
        for t in 1..=3usize {
            let cases = 50 / (4 * 3) + 1; // ~50 masks over the (m, T) grid
            for seed in 0..cases as u64 {
                let mask = random_mask::<f64>(m, t, 1000 * (m as u64) + 10 * (t as u64) + seed)
                    .unwrap();
                let cols = effective_columns(&mask, &dict);
                let (mu_ref, gram_ref) = brute_force_mu(&cols);

                let report = exact_coherence(&mask, &dict).unwrap();
                assert!(
                    (report.exact_mu - mu_ref).abs() < 1e-12,
                    "m={m} T={t} seed={seed}: {} vs {}",
                    report.exact_mu,
                    mu_ref
                );
                if n * t > 1 {
                    let ((fa, ba), (fb, bb)) = report.argmax_pair;
                    let at_argmax = gram_entry(&mask, &dict, fa, fb, ba, bb).unwrap();
                    assert!((at_argmax.abs() - mu_ref).abs() < 1e-12);
                }

                // every Gram entry, not just the max
                for fa in 0..t {
                    for fb in 0..t {
                        for ba in 0..n {
                            for bb in 0..n {
                                let got = gram_entry(&mask, &dict, fa, fb, ba, bb).unwrap();
                                let want = gram_ref[[fa * n + ba, fb * n + bb]];
                                assert!(
                                    (got - want).abs() < 1e-12,
                                    "m={m} T={t} entry ({fa},{ba})x({fb},{bb}): {got} vs {want}"
                                );
                            }
                        }
                    }
                }
                checked += 1;
            }
        }
    }
    assert!(checked >= 50, "only {checked} masks checked");
}
