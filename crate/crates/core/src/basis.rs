//! Orthonormal 2D-DCT sparsifying basis.

use crate::{Error, Real, Result};
use ndarray::{Array1, Array2, ArrayView1};

/// Largest supported patch edge length. At 64 the dense basis is 4096x4096,
/// which is the practical ceiling for the dense coherence kernels.
pub const MAX_SIDE: usize = 64;

/// Orthonormal square basis for one `m x m` frame patch.
///
/// `atoms` is `n x n` with `n = m*m`; rows are indexed by pixel, columns by
/// frequency, so column `beta` is the vectorized basis image of frequency
/// `beta` and `atoms[[alpha, beta]]` is the value that pixel `alpha` takes
/// in that basis image.
#[derive(Debug, Clone)]
pub struct Dictionary<F> {
    side: usize,
    atoms: Array2<F>,
}

impl<F: Real> Dictionary<F> {
    /// Wraps an arbitrary orthonormal square basis.
    pub fn from_atoms(side: usize, atoms: Array2<F>) -> Result<Self> {
        let n = side * side;
        if atoms.nrows() != n || atoms.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "expected {n}x{n} atoms for side {side}, got {}x{}",
                atoms.nrows(),
                atoms.ncols()
            )));
        }
        let gram = atoms.t().dot(&atoms);
        let tol = orthonormality_tol::<F>(n);
        for ((i, j), &g) in gram.indexed_iter() {
            let expect = if i == j { F::one() } else { F::zero() };
            if (g - expect).abs() > tol {
                return Err(Error::Validation(format!(
                    "atoms are not orthonormal: gram[{i},{j}] = {g}"
                )));
            }
        }
        Ok(Self { side, atoms })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Number of pixels per patch (= number of atoms).
    pub fn dim(&self) -> usize {
        self.side * self.side
    }

    pub fn atoms(&self) -> &Array2<F> {
        &self.atoms
    }

    /// Basis value of frequency `freq` at pixel `pixel`.
    #[inline]
    pub fn atom_value(&self, pixel: usize, freq: usize) -> F {
        self.atoms[[pixel, freq]]
    }

    /// Transform coefficients of a vectorized patch.
    pub fn analyze(&self, patch: ArrayView1<F>) -> Result<Array1<F>> {
        if patch.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "patch length {} does not match basis dimension {}",
                patch.len(),
                self.dim()
            )));
        }
        Ok(self.atoms.t().dot(&patch))
    }

    /// Reconstructs a vectorized patch from its coefficients.
    pub fn synthesize(&self, coeffs: ArrayView1<F>) -> Result<Array1<F>> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient length {} does not match basis dimension {}",
                coeffs.len(),
                self.dim()
            )));
        }
        Ok(self.atoms.dot(&coeffs))
    }
}

fn orthonormality_tol<F: Real>(n: usize) -> F {
    let eps_based = F::epsilon() * F::of(64.0 * n as f64);
    eps_based.max(F::of(1e-12))
}

/// Builds the orthonormal 2D-DCT-II basis for `m x m` patches.
///
/// Column `beta = p*m + q` is the separable cosine image with vertical
/// frequency `p` and horizontal frequency `q`; column 0 is the constant
/// atom with value `1/m`.
pub fn build_dct2_basis<F: Real>(m: usize) -> Result<Dictionary<F>> {
    if m == 0 || m > MAX_SIDE {
        return Err(Error::InvalidSize(m));
    }
    let n = m * m;
    // 1D orthonormal DCT-II: c[k][x] = a(k) cos(pi (2x+1) k / 2m)
    let mut c = vec![vec![0.0f64; m]; m];
    let mf = m as f64;
    for k in 0..m {
        let amp = if k == 0 {
            (1.0 / mf).sqrt()
        } else {
            (2.0 / mf).sqrt()
        };
        for x in 0..m {
            c[k][x] = amp * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * k as f64 / (2.0 * mf)).cos();
        }
    }
    let mut atoms = Array2::zeros((n, n));
    for p in 0..m {
        for q in 0..m {
            let freq = p * m + q;
            for r in 0..m {
                for s in 0..m {
                    let pixel = r * m + s;
                    atoms[[pixel, freq]] = F::of(c[p][r] * c[q][s]);
                }
            }
        }
    }
    Ok(Dictionary { side: m, atoms })
}
