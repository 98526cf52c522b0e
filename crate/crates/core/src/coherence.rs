//! Mutual coherence of structured block sensing matrices.
//!
//! The effective dictionary is `(Phi_1 D | ... | Phi_T D)` where each
//! `Phi_t` is diagonal with a frame of the code mask on its diagonal and
//! `D` is an orthonormal patch basis. Everything here works on the mask
//! entries directly through the normalized Gram entries
//!
//! `M[mu,nu](beta,gamma) = chi / xi`,
//! `chi = sum_a phi[mu,a] phi[nu,a] d_a(beta) d_a(gamma)`,
//! `xi^2 = (sum_a phi[mu,a]^2 d_a(beta)^2)(sum_a phi[nu,a]^2 d_a(gamma)^2)`,
//!
//! so the full `n x nT` matrix is never assembled. The smooth surrogate is
//! a log-sum-exp over the squared Gram entries; the circular variant pools
//! the entries of every 2D circular shift of the mask into one
//! log-sum-exp, which keeps tiled masks incoherent for overlapping
//! patch-wise recovery.

use crate::basis::Dictionary;
use crate::{mask_floor, Error, Real, Result};
use ndarray::{Array1, Array2, Array3, Axis};
use rayon::prelude::*;

/// Non-negative per-frame code patterns: `T` frames of `m x m` values in
/// `[MASK_FLOOR, 1]`, the diagonals of the per-frame sensing matrices at
/// patch scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMask<F> {
    values: Array3<F>,
}

impl<F: Real> CodeMask<F> {
    pub fn new(values: Array3<F>) -> Result<Self> {
        let (t, m, m2) = values.dim();
        if t == 0 || m == 0 {
            return Err(Error::Validation(
                "mask must have at least one frame and one pixel".into(),
            ));
        }
        if m != m2 {
            return Err(Error::DimensionMismatch(format!(
                "mask frames must be square, got {m}x{m2}"
            )));
        }
        let floor = mask_floor::<F>();
        for &v in values.iter() {
            if !(v >= floor && v <= F::one()) {
                return Err(Error::Validation(format!(
                    "mask entry {v} outside [{}, 1]",
                    crate::MASK_FLOOR
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn side(&self) -> usize {
        self.values.dim().1
    }

    /// Pixels per frame.
    pub fn dim(&self) -> usize {
        self.side() * self.side()
    }

    pub fn values(&self) -> &Array3<F> {
        &self.values
    }

    #[inline]
    pub fn entry(&self, frame: usize, row: usize, col: usize) -> F {
        self.values[[frame, row, col]]
    }

    /// Mask as a `T x n` matrix, spatial indices flattened row-major.
    pub fn flat(&self) -> Array2<F> {
        let (t, m, _) = self.values.dim();
        let mut out = Array2::zeros((t, m * m));
        for fi in 0..t {
            for r in 0..m {
                for c in 0..m {
                    out[[fi, r * m + c]] = self.values[[fi, r, c]];
                }
            }
        }
        out
    }

    /// Stable content hash used to tie snapshots back to the mask that
    /// produced them.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |word: u64| {
            for byte in word.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.frames() as u64);
        eat(self.side() as u64);
        for &v in self.values.iter() {
            eat(v.to_f64().unwrap_or(f64::NAN).to_bits());
        }
        h
    }
}

/// 2D circular displacement applied to the spatial indexing of every frame
/// of a mask simultaneously.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shift {
    pub dr: usize,
    pub dc: usize,
}

impl Shift {
    pub fn new(dr: usize, dc: usize, side: usize) -> Result<Self> {
        if dr >= side || dc >= side {
            return Err(Error::InvalidParameter(format!(
                "shift ({dr}, {dc}) out of range for side {side}"
            )));
        }
        Ok(Self { dr, dc })
    }

    /// Shift with both displacements reduced modulo `side`.
    pub fn wrapped(dr: usize, dc: usize, side: usize) -> Self {
        Self {
            dr: dr % side,
            dc: dc % side,
        }
    }
}

/// Coherence figures for one mask against one basis.
#[derive(Debug, Clone)]
pub struct CoherenceReport<F> {
    /// Hard mutual coherence, in `[0, 1]`.
    pub exact_mu: F,
    /// Column pair `((mu, beta), (nu, gamma))` achieving `exact_mu`.
    pub argmax_pair: ((usize, usize), (usize, usize)),
    /// Smooth surrogate value, when evaluated.
    pub soft_c: Option<F>,
    /// Sharpness the surrogate was evaluated at.
    pub theta: Option<F>,
    /// Hard coherence of every circular shift, row-major in `(dr, dc)`.
    pub per_shift: Option<Vec<(Shift, F)>>,
}

/// Number of column-pair terms in the plain soft-max sum.
pub fn pair_term_count(n: usize, frames: usize) -> usize {
    frames * (frames - 1) / 2 * n * n + frames * n * (n - 1) / 2
}

fn check_sides<F: Real>(mask: &CodeMask<F>, dict: &Dictionary<F>) -> Result<()> {
    if mask.side() != dict.side() {
        return Err(Error::DimensionMismatch(format!(
            "mask side {} does not match basis side {}",
            mask.side(),
            dict.side()
        )));
    }
    Ok(())
}

fn check_theta<F: Real>(theta: F) -> Result<()> {
    if !(theta > F::zero()) {
        return Err(Error::InvalidParameter(format!(
            "theta must be positive, got {theta}"
        )));
    }
    Ok(())
}

/// Shared per-evaluation factors: the flattened mask and the effective
/// squared column norms `norms[mu, beta] = sum_a phi[mu,a]^2 d_a(beta)^2`.
struct MaskEval<F> {
    flat: Array2<F>,
    norms: Array2<F>,
}

fn mask_eval<F: Real>(flat: Array2<F>, atoms_sq: &Array2<F>) -> Result<MaskEval<F>> {
    let flat_sq = &flat * &flat;
    let norms = flat_sq.dot(atoms_sq);
    for ((mu, beta), &v) in norms.indexed_iter() {
        if !(v > F::zero()) {
            return Err(Error::DegenerateColumn {
                frame: mu,
                column: beta,
            });
        }
    }
    Ok(MaskEval { flat, norms })
}

/// Normalized Gram block `M[mu,nu]` as a full `n x n` matrix.
fn block_m<F: Real>(atoms: &Array2<F>, eval: &MaskEval<F>, mu: usize, nu: usize) -> Array2<F> {
    let n = atoms.nrows();
    let w = &eval.flat.row(mu) * &eval.flat.row(nu);
    // chi = atoms^T diag(w) atoms
    let mut scaled = atoms.clone();
    for (mut row, &wi) in scaled.axis_iter_mut(Axis(0)).zip(w.iter()) {
        row.mapv_inplace(|v| v * wi);
    }
    let mut m = atoms.t().dot(&scaled);
    for beta in 0..n {
        let nb = eval.norms[[mu, beta]];
        for gamma in 0..n {
            let xi = (nb * eval.norms[[nu, gamma]]).sqrt();
            m[[beta, gamma]] /= xi;
        }
    }
    m
}

/// Block enumeration: all below-block-diagonal blocks in full, on-diagonal
/// blocks below their own diagonal.
fn blocks(frames: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for mu in 0..frames {
        for nu in 0..=mu {
            out.push((mu, nu));
        }
    }
    out
}

/// Single normalized Gram entry, `O(n)`.
pub fn gram_entry<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    mu: usize,
    nu: usize,
    beta: usize,
    gamma: usize,
) -> Result<F> {
    check_sides(mask, dict)?;
    let n = mask.dim();
    if mu >= mask.frames() || nu >= mask.frames() || beta >= n || gamma >= n {
        return Err(Error::InvalidParameter(format!(
            "gram index ({mu},{nu},{beta},{gamma}) out of range"
        )));
    }
    let flat = mask.flat();
    let mut chi = F::zero();
    let mut norm_b = F::zero();
    let mut norm_g = F::zero();
    for alpha in 0..n {
        let pm = flat[[mu, alpha]];
        let pn = flat[[nu, alpha]];
        let db = dict.atom_value(alpha, beta);
        let dg = dict.atom_value(alpha, gamma);
        chi += pm * pn * db * dg;
        norm_b += pm * pm * db * db;
        norm_g += pn * pn * dg * dg;
    }
    if !(norm_b > F::zero()) {
        return Err(Error::DegenerateColumn {
            frame: mu,
            column: beta,
        });
    }
    if !(norm_g > F::zero()) {
        return Err(Error::DegenerateColumn {
            frame: nu,
            column: gamma,
        });
    }
    Ok(chi / (norm_b * norm_g).sqrt())
}

fn exact_of_eval<F: Real>(
    atoms: &Array2<F>,
    eval: &MaskEval<F>,
    frames: usize,
) -> (F, ((usize, usize), (usize, usize))) {
    let n = atoms.nrows();
    let mut best = F::neg_infinity();
    let mut arg = ((0, 0), (0, 0));
    for (mu, nu) in blocks(frames) {
        let m = block_m(atoms, eval, mu, nu);
        for beta in 0..n {
            let gamma_end = if mu == nu { beta } else { n };
            for gamma in 0..gamma_end {
                let v = m[[beta, gamma]].abs();
                if v > best {
                    best = v;
                    arg = ((mu, beta), (nu, gamma));
                }
            }
        }
    }
    (best.min(F::one()).max(F::zero()), arg)
}

/// Hard mutual coherence of the effective dictionary.
pub fn exact_coherence<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
) -> Result<CoherenceReport<F>> {
    check_sides(mask, dict)?;
    let atoms_sq = dict.atoms() * dict.atoms();
    let eval = mask_eval(mask.flat(), &atoms_sq)?;
    let (exact_mu, argmax_pair) = exact_of_eval(dict.atoms(), &eval, mask.frames());
    Ok(CoherenceReport {
        exact_mu,
        argmax_pair,
        soft_c: None,
        theta: None,
        per_shift: None,
    })
}

/// Max of squared Gram entries over the pair enumeration.
fn max_sq<F: Real>(atoms: &Array2<F>, eval: &MaskEval<F>, frames: usize) -> F {
    let n = atoms.nrows();
    let mut best = F::neg_infinity();
    for (mu, nu) in blocks(frames) {
        let m = block_m(atoms, eval, mu, nu);
        for beta in 0..n {
            let gamma_end = if mu == nu { beta } else { n };
            for gamma in 0..gamma_end {
                let v = m[[beta, gamma]];
                best = best.max(v * v);
            }
        }
    }
    best
}

/// Shifted sum `sum exp(theta (M^2 - cap))` over the pair enumeration.
fn sum_exp<F: Real>(atoms: &Array2<F>, eval: &MaskEval<F>, frames: usize, theta: F, cap: F) -> F {
    let n = atoms.nrows();
    let mut total = F::zero();
    for (mu, nu) in blocks(frames) {
        let m = block_m(atoms, eval, mu, nu);
        for beta in 0..n {
            let gamma_end = if mu == nu { beta } else { n };
            for gamma in 0..gamma_end {
                let v = m[[beta, gamma]];
                total += (theta * (v * v - cap)).exp();
            }
        }
    }
    total
}

/// Weight sum and unnormalized gradient `sum_p w_p 2 M_p dM_p/dphi` for one
/// mask under the shifted weights `w = exp(theta (M^2 - cap))`.
///
/// Assembled per block: with `A = 2 w M / xi`,
/// the quadratic form `Q[eps] = (atoms A atoms^T)[eps,eps]` carries the
/// chi-derivative, and row/column sums of `2 w M^2` over the block carry
/// the norm derivative.
fn grad_accum<F: Real>(
    atoms: &Array2<F>,
    atoms_sq: &Array2<F>,
    eval: &MaskEval<F>,
    frames: usize,
    theta: F,
    cap: F,
) -> (F, Array2<F>) {
    let n = atoms.nrows();
    let mut sum_w = F::zero();
    let mut grad = Array2::<F>::zeros((frames, n));
    for (mu, nu) in blocks(frames) {
        let m = block_m(atoms, eval, mu, nu);
        let mut a = Array2::<F>::zeros((n, n));
        let mut s_row = Array1::<F>::zeros(n);
        let mut s_col = Array1::<F>::zeros(n);
        let two = F::of(2.0);
        for beta in 0..n {
            let gamma_end = if mu == nu { beta } else { n };
            let nb = eval.norms[[mu, beta]];
            for gamma in 0..gamma_end {
                let v = m[[beta, gamma]];
                let w = (theta * (v * v - cap)).exp();
                sum_w += w;
                let xi = (nb * eval.norms[[nu, gamma]]).sqrt();
                a[[beta, gamma]] = two * w * v / xi;
                let wv2 = two * w * v * v;
                s_row[beta] += wv2;
                s_col[gamma] += wv2;
            }
        }
        // chi term: Q[eps] = row_eps(atoms) A row_eps(atoms)^T
        let u = atoms.dot(&a);
        let q = (&u * atoms).sum_axis(Axis(1));
        // norm terms
        let v1 = &s_row / &eval.norms.row(mu);
        let v2 = &s_col / &eval.norms.row(nu);
        let t_mu = atoms_sq.dot(&v1);
        let t_nu = atoms_sq.dot(&v2);
        for eps in 0..n {
            grad[[mu, eps]] += eval.flat[[nu, eps]] * q[eps] - eval.flat[[mu, eps]] * t_mu[eps];
            grad[[nu, eps]] += eval.flat[[mu, eps]] * q[eps] - eval.flat[[nu, eps]] * t_nu[eps];
        }
    }
    (sum_w, grad)
}

/// Smooth surrogate for the squared mutual coherence: log-sum-exp of
/// `theta M^2` over all distinct column pairs, divided by `theta`.
pub fn soft_coherence<F: Real>(mask: &CodeMask<F>, dict: &Dictionary<F>, theta: F) -> Result<F> {
    check_sides(mask, dict)?;
    check_theta(theta)?;
    let atoms_sq = dict.atoms() * dict.atoms();
    let eval = mask_eval(mask.flat(), &atoms_sq)?;
    let cap = max_sq(dict.atoms(), &eval, mask.frames());
    let total = sum_exp(dict.atoms(), &eval, mask.frames(), theta, cap);
    Ok(cap + total.ln() / theta)
}

/// Analytic gradient of [`soft_coherence`] with respect to every mask
/// entry, shape `T x m x m`.
pub fn soft_coherence_grad<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    theta: F,
) -> Result<Array3<F>> {
    Ok(soft_coherence_with_grad(mask, dict, theta)?.1)
}

/// Value and gradient in one evaluation.
pub fn soft_coherence_with_grad<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    theta: F,
) -> Result<(F, Array3<F>)> {
    check_sides(mask, dict)?;
    check_theta(theta)?;
    let atoms_sq = dict.atoms() * dict.atoms();
    let eval = mask_eval(mask.flat(), &atoms_sq)?;
    let cap = max_sq(dict.atoms(), &eval, mask.frames());
    let (sum_w, raw) = grad_accum(dict.atoms(), &atoms_sq, &eval, mask.frames(), theta, cap);
    let value = cap + sum_w.ln() / theta;
    let grad = flat_grad_to_grid(&(&raw / sum_w), mask.side());
    Ok((value, grad))
}

fn flat_grad_to_grid<F: Real>(flat: &Array2<F>, side: usize) -> Array3<F> {
    let frames = flat.nrows();
    let mut out = Array3::zeros((frames, side, side));
    for t in 0..frames {
        for r in 0..side {
            for c in 0..side {
                out[[t, r, c]] = flat[[t, r * side + c]];
            }
        }
    }
    out
}

/// Circularly rolls every frame of the mask by `(dr, dc)`: the entry at
/// `(r, c)` of the result is the entry at `((r+dr) mod m, (c+dc) mod m)`
/// of the input.
pub fn shift_mask<F: Real>(mask: &CodeMask<F>, zeta: Shift) -> CodeMask<F> {
    let (frames, m, _) = mask.values().dim();
    let dr = zeta.dr % m;
    let dc = zeta.dc % m;
    let mut out = Array3::zeros((frames, m, m));
    for t in 0..frames {
        for r in 0..m {
            for c in 0..m {
                out[[t, r, c]] = mask.values()[[t, (r + dr) % m, (c + dc) % m]];
            }
        }
    }
    CodeMask { values: out }
}

/// Rolls a `T x n` flat grid (row-major spatial order) by `(dr, dc)`.
fn shift_flat<F: Real>(flat: &Array2<F>, side: usize, dr: usize, dc: usize) -> Array2<F> {
    let frames = flat.nrows();
    let mut out = Array2::zeros((frames, side * side));
    for t in 0..frames {
        for r in 0..side {
            for c in 0..side {
                let src = ((r + dr) % side) * side + (c + dc) % side;
                out[[t, r * side + c]] = flat[[t, src]];
            }
        }
    }
    out
}

fn all_shifts(side: usize) -> Vec<Shift> {
    let mut out = Vec::with_capacity(side * side);
    for dr in 0..side {
        for dc in 0..side {
            out.push(Shift { dr, dc });
        }
    }
    out
}

/// Soft coherence pooled over all `m^2` circular shifts of the mask in a
/// single log-sum-exp.
pub fn circular_soft_coherence<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    theta: F,
) -> Result<F> {
    check_sides(mask, dict)?;
    check_theta(theta)?;
    let atoms = dict.atoms();
    let atoms_sq = atoms * atoms;
    let side = mask.side();
    let frames = mask.frames();
    let flat = mask.flat();
    let shifts = all_shifts(side);

    let evals = shifts
        .par_iter()
        .map(|z| mask_eval(shift_flat(&flat, side, z.dr, z.dc), &atoms_sq))
        .collect::<Result<Vec<_>>>()?;
    let caps: Vec<F> = evals
        .par_iter()
        .map(|e| max_sq(atoms, e, frames))
        .collect();
    let cap = caps.iter().cloned().fold(F::neg_infinity(), F::max);
    let partial: Vec<F> = evals
        .par_iter()
        .map(|e| sum_exp(atoms, e, frames, theta, cap))
        .collect();
    let total: F = partial.iter().cloned().sum();
    Ok(cap + total.ln() / theta)
}

/// Gradient of [`circular_soft_coherence`]: per-shift gradients are mapped
/// back through the inverse spatial roll and pooled under the shared
/// log-sum-exp weights.
pub fn circular_soft_coherence_grad<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    theta: F,
) -> Result<Array3<F>> {
    Ok(circular_soft_coherence_with_grad(mask, dict, theta)?.1)
}

/// Value and gradient of the circular objective in one evaluation.
pub fn circular_soft_coherence_with_grad<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    theta: F,
) -> Result<(F, Array3<F>)> {
    check_sides(mask, dict)?;
    check_theta(theta)?;
    let atoms = dict.atoms();
    let atoms_sq = atoms * atoms;
    let side = mask.side();
    let frames = mask.frames();
    let flat = mask.flat();
    let shifts = all_shifts(side);

    let evals = shifts
        .par_iter()
        .map(|z| mask_eval(shift_flat(&flat, side, z.dr, z.dc), &atoms_sq))
        .collect::<Result<Vec<_>>>()?;
    let caps: Vec<F> = evals
        .par_iter()
        .map(|e| max_sq(atoms, e, frames))
        .collect();
    let cap = caps.iter().cloned().fold(F::neg_infinity(), F::max);

    let partial: Vec<(F, Array2<F>)> = evals
        .par_iter()
        .zip(shifts.par_iter())
        .map(|(e, z)| {
            let (sw, g) = grad_accum(atoms, &atoms_sq, e, frames, theta, cap);
            // dphi'[r,c] lives at original position ((r+dr) mod m, (c+dc) mod m)
            let back = shift_flat(&g, side, (side - z.dr) % side, (side - z.dc) % side);
            (sw, back)
        })
        .collect();

    let mut sum_w = F::zero();
    let mut raw = Array2::<F>::zeros((frames, side * side));
    for (sw, g) in &partial {
        sum_w += *sw;
        raw += g;
    }
    let value = cap + sum_w.ln() / theta;
    let grad = flat_grad_to_grid(&(&raw / sum_w), side);
    Ok((value, grad))
}

/// Hard coherence of every circular shift of the mask, row-major in
/// `(dr, dc)`.
pub fn shift_coherence_table<F: Real>(
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
) -> Result<Vec<(Shift, F)>> {
    check_sides(mask, dict)?;
    let atoms = dict.atoms();
    let atoms_sq = atoms * atoms;
    let side = mask.side();
    let frames = mask.frames();
    let flat = mask.flat();
    let shifts = all_shifts(side);
    let mus = shifts
        .par_iter()
        .map(|z| {
            let eval = mask_eval(shift_flat(&flat, side, z.dr, z.dc), &atoms_sq)?;
            Ok(exact_of_eval(atoms, &eval, frames).0)
        })
        .collect::<Result<Vec<F>>>()?;
    Ok(shifts.into_iter().zip(mus).collect())
}

#[cfg(test)]
pub(crate) fn mask_from_values<F: Real>(values: Array3<F>) -> CodeMask<F> {
    CodeMask { values }
}
