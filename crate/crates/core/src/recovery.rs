//! Patch-wise sparse recovery from coded snapshots.
//!
//! Each `m x m` snapshot patch satisfies `y = (phi_1 D | ... | phi_T D) a`
//! with `a` sparse, so the frames are recovered by solving basis pursuit
//! denoising per patch and averaging overlapping estimates. The solver is
//! an operator-splitting (alternating-direction) method with a final
//! support polish, which reaches machine-accurate solutions on the small
//! systems that arise here.

use crate::basis::Dictionary;
use crate::coherence::CodeMask;
use crate::sensing::{FrameStack, Snapshot};
use crate::{Error, Real, Result};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

/// Residual tolerance for the `||y - A a||_2 <= eps` constraint.
#[derive(Debug, Clone, Copy)]
pub enum EpsilonSpec<F> {
    Absolute(F),
    /// `eps = factor * ||y||_2`, resolved per solve.
    RelativeToNorm(F),
}

impl<F: Real> EpsilonSpec<F> {
    pub fn resolve(&self, y: ArrayView1<F>) -> F {
        match *self {
            EpsilonSpec::Absolute(e) => e,
            EpsilonSpec::RelativeToNorm(f) => f * y.dot(&y).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig<F> {
    pub epsilon: EpsilonSpec<F>,
    pub max_iters: usize,
    pub primal_tol: F,
    pub dual_tol: F,
    /// Sliding-window step for full-frame recovery, in `[1, m]`.
    pub stride: usize,
}

impl<F: Real> Default for SolverConfig<F> {
    fn default() -> Self {
        Self {
            epsilon: EpsilonSpec::RelativeToNorm(F::of(1e-8)),
            max_iters: 4000,
            primal_tol: F::of(1e-10),
            dual_tol: F::of(1e-10),
            stride: 1,
        }
    }
}

impl<F: Real> SolverConfig<F> {
    pub fn validate(&self, side: Option<usize>) -> Result<()> {
        let eps = match self.epsilon {
            EpsilonSpec::Absolute(e) => e,
            EpsilonSpec::RelativeToNorm(f) => f,
        };
        if eps < F::zero() {
            return Err(Error::InvalidParameter("epsilon must be >= 0".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        if let Some(m) = side {
            if self.stride > m {
                return Err(Error::InvalidParameter(format!(
                    "stride {} exceeds patch side {m}",
                    self.stride
                )));
            }
        }
        Ok(())
    }
}

/// Per-run recovery statistics, emitted as one JSON line by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub patches: usize,
    pub failures: usize,
    pub mean_residual: f64,
    pub rrmse: Option<f64>,
}

// --- small dense linear algebra -------------------------------------------

/// Lower-triangular Cholesky factor, or `None` if the matrix is not
/// positive definite.
fn cholesky<F: Real>(a: &Array2<F>) -> Option<Array2<F>> {
    let n = a.nrows();
    let mut l = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > F::zero()) {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower factor.
fn chol_solve<F: Real>(l: &Array2<F>, b: ArrayView1<F>) -> Array1<F> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            let xk = x[k];
            x[i] -= lik * xk;
        }
        x[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l[[k, i]];
            let xk = x[k];
            x[i] -= lki * xk;
        }
        x[i] /= l[[i, i]];
    }
    x
}

fn norm2<F: Real>(v: ArrayView1<F>) -> F {
    v.dot(&v).sqrt()
}

fn l1<F: Real>(v: ArrayView1<F>) -> F {
    v.iter().map(|x| x.abs()).sum()
}

// --- basis pursuit denoising ----------------------------------------------

/// Solves `min ||a||_1 subject to ||A a - y||_2 <= eps`.
///
/// Three-block splitting: a consensus copy `z` carries the l1 term and a
/// residual variable `r` carries the norm-ball constraint. The `a`-update
/// system `(I + A^T A)` is handled through the `p x p` Woodbury complement,
/// and the final answer is polished by least squares on the detected
/// support whenever that stays feasible.
pub fn bpdn_solve<F: Real>(
    a: ArrayView2<F>,
    y: ArrayView1<F>,
    cfg: &SolverConfig<F>,
) -> Result<Array1<F>> {
    Ok(bpdn_solve_full(a, y, cfg)?.0)
}

/// [`bpdn_solve`] also returning the achieved residual norm.
pub fn bpdn_solve_full<F: Real>(
    a: ArrayView2<F>,
    y: ArrayView1<F>,
    cfg: &SolverConfig<F>,
) -> Result<(Array1<F>, F)> {
    let (p, q) = a.dim();
    if p == 0 || q == 0 {
        return Err(Error::DimensionMismatch("empty system matrix".into()));
    }
    if y.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "measurement length {} does not match {} rows",
            y.len(),
            p
        )));
    }
    cfg.validate(None)?;
    let eps = cfg.epsilon.resolve(y);
    let y_norm = norm2(y);
    let feas_tol = eps + F::of(1e-9) * (F::one() + y_norm);

    // zero is feasible (and optimal) when the ball contains the origin
    if y_norm <= eps + F::epsilon() {
        return Ok((Array1::zeros(q), y_norm));
    }

    let at = a.t();
    // G = I + A A^T for the Woodbury solve
    let mut g = a.dot(&at);
    for i in 0..p {
        g[[i, i]] += F::one();
    }
    let chol_g = cholesky(&g).ok_or_else(|| Error::Validation(
        "Gram matrix is not positive definite (non-finite entries?)".into(),
    ))?;
    // A A^T for exact feasibility projection; may be singular
    let aat = a.dot(&at);
    let chol_aat = cholesky(&aat);

    let solve_ridge = |b: &Array1<F>| -> Array1<F> {
        let ab = a.dot(b);
        b - &at.dot(&chol_solve(&chol_g, ab.view()))
    };
    let project_ball = |v: &Array1<F>| -> Array1<F> {
        let nv = norm2(v.view());
        if nv <= eps || nv == F::zero() {
            v.clone()
        } else {
            v * (eps / nv)
        }
    };
    // exact projection onto the constraint set along A^T (A A^T)^{-1}
    let make_feasible = |alpha: &Array1<F>| -> Option<(Array1<F>, F)> {
        let w = &a.dot(alpha) - &y;
        let nw = norm2(w.view());
        if nw <= feas_tol {
            return Some((alpha.clone(), nw));
        }
        let chol = chol_aat.as_ref()?;
        let scale = F::one() - eps / nw;
        let corr = at.dot(&chol_solve(chol, w.view())) * scale;
        let fixed = alpha - &corr;
        let nr = norm2((&a.dot(&fixed) - &y).view());
        if nr <= feas_tol {
            Some((fixed, nr))
        } else {
            None
        }
    };

    let mut alpha = Array1::<F>::zeros(q);
    let mut z = Array1::<F>::zeros(q);
    let mut r = Array1::<F>::zeros(p);
    let mut u = Array1::<F>::zeros(q);
    let mut v = Array1::<F>::zeros(p);
    let mut rho = F::one();
    let ten = F::of(10.0);
    let two = F::of(2.0);
    let scale = F::one().max(y_norm);

    for iter in 0..cfg.max_iters {
        let b = &(&z - &u) + &at.dot(&(&y + &r - &v));
        alpha = solve_ridge(&b);
        let a_alpha = a.dot(&alpha);

        let r_old = r.clone();
        r = project_ball(&(&a_alpha - &y + &v));

        let z_old = z.clone();
        let thresh = F::one() / rho;
        z = (&alpha + &u).mapv(|x| {
            if x > thresh {
                x - thresh
            } else if x < -thresh {
                x + thresh
            } else {
                F::zero()
            }
        });

        u += &(&alpha - &z);
        v += &(&a_alpha - &y - &r);

        let pr = {
            let e1 = &alpha - &z;
            let e2 = &a_alpha - &y - &r;
            (e1.dot(&e1) + e2.dot(&e2)).sqrt()
        };
        let dr = {
            let d1 = &z - &z_old;
            let d2 = at.dot(&(&r - &r_old));
            rho * (d1.dot(&d1) + d2.dot(&d2)).sqrt()
        };
        if pr <= cfg.primal_tol * scale && dr <= cfg.dual_tol * scale {
            break;
        }
        if iter % 25 == 24 {
            if pr > ten * dr {
                rho *= two;
                u.mapv_inplace(|x| x / two);
                v.mapv_inplace(|x| x / two);
            } else if dr > ten * pr {
                rho /= two;
                u.mapv_inplace(|x| x * two);
                v.mapv_inplace(|x| x * two);
            }
        }
    }

    // candidates: polished support solution, then the feasible projections
    // of z and alpha; keep the feasible one with least l1
    let mut best: Option<(Array1<F>, F)> = None;
    let mut consider = |cand: Option<(Array1<F>, F)>| {
        if let Some((c, res)) = cand {
            let better = match &best {
                None => true,
                Some((b, _)) => l1(c.view()) < l1(b.view()),
            };
            if better {
                best = Some((c, res));
            }
        }
    };

    consider(polish(a, at, y, eps, feas_tol, &z));
    consider(make_feasible(&z));
    consider(make_feasible(&alpha));

    match best {
        Some((c, res)) => Ok((c, res)),
        None => Err(Error::SolverFailure {
            residual: norm2((&a.dot(&alpha) - &y).view())
                .to_f64()
                .unwrap_or(f64::NAN),
            epsilon: eps.to_f64().unwrap_or(f64::NAN),
            iters: cfg.max_iters,
        }),
    }
}

/// Least squares on the support of `z`; accepted only when feasible.
fn polish<F: Real>(
    a: ArrayView2<F>,
    at: ArrayView2<F>,
    y: ArrayView1<F>,
    eps: F,
    feas_tol: F,
    z: &Array1<F>,
) -> Option<(Array1<F>, F)> {
    let q = z.len();
    let p = a.nrows();
    let zmax = z.iter().fold(F::zero(), |acc, x| acc.max(x.abs()));
    if zmax == F::zero() {
        return None;
    }
    let cutoff = zmax * F::of(1e-10);
    let support: Vec<usize> = (0..q).filter(|&i| z[i].abs() > cutoff).collect();
    if support.is_empty() || support.len() > p {
        return None;
    }
    let k = support.len();
    let mut asub = Array2::<F>::zeros((p, k));
    for (j, &col) in support.iter().enumerate() {
        asub.column_mut(j).assign(&a.column(col));
    }
    let gram = asub.t().dot(&asub);
    let chol = cholesky(&gram)?;
    let rhs = asub.t().dot(&y);
    let xs = chol_solve(&chol, rhs.view());
    let mut full = Array1::<F>::zeros(q);
    for (j, &col) in support.iter().enumerate() {
        full[col] = xs[j];
    }
    let res = norm2((&a.dot(&full) - &y).view());
    let _ = at;
    if res <= feas_tol.max(eps) {
        Some((full, res))
    } else {
        None
    }
}

// --- patch-level recovery --------------------------------------------------

/// Effective patch system `(phi_1 D | ... | phi_T D)`, `m^2 x m^2 T`.
pub fn patch_system<F: Real>(pcode: &CodeMask<F>, dict: &Dictionary<F>) -> Result<Array2<F>> {
    if pcode.side() != dict.side() {
        return Err(Error::DimensionMismatch(format!(
            "patch code side {} does not match basis side {}",
            pcode.side(),
            dict.side()
        )));
    }
    let n = pcode.dim();
    let t = pcode.frames();
    let flat = pcode.flat();
    let mut a = Array2::<F>::zeros((n, n * t));
    for fi in 0..t {
        for j in 0..n {
            for i in 0..n {
                a[[i, fi * n + j]] = flat[[fi, i]] * dict.atom_value(i, j);
            }
        }
    }
    Ok(a)
}

/// Recovers the `T` patches seen by one snapshot patch.
pub fn recover_patch<F: Real>(
    y_patch: ArrayView1<F>,
    pcode: &CodeMask<F>,
    dict: &Dictionary<F>,
    cfg: &SolverConfig<F>,
) -> Result<Vec<Array1<F>>> {
    let n = pcode.dim();
    if y_patch.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "patch length {} does not match {n} pixels",
            y_patch.len()
        )));
    }
    let a = patch_system(pcode, dict)?;
    let alpha = bpdn_solve(a.view(), y_patch, cfg)?;
    let t = pcode.frames();
    let mut out = Vec::with_capacity(t);
    for fi in 0..t {
        let coeffs = alpha.slice(s![fi * n..(fi + 1) * n]);
        out.push(dict.synthesize(coeffs)?);
    }
    Ok(out)
}

fn stride_positions(extent: usize, m: usize, stride: usize) -> Vec<usize> {
    let last = extent - m;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Recovers the full frame stack from a snapshot by sliding-window patch
/// recovery with overlap averaging.
///
/// Patches whose solve fails are skipped and their uncovered pixels filled
/// by neighbor averaging; the operation errors out only when more than 1%
/// of patches fail.
pub fn recover_frames<F: Real>(
    snap: &Snapshot<F>,
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    cfg: &SolverConfig<F>,
) -> Result<(FrameStack<F>, RecoveryReport)> {
    let m = mask.side();
    cfg.validate(Some(m))?;
    if dict.side() != m {
        return Err(Error::DimensionMismatch(format!(
            "basis side {} does not match mask side {m}",
            dict.side()
        )));
    }
    if snap.mask_side != m || snap.frames != mask.frames() {
        return Err(Error::DimensionMismatch(format!(
            "snapshot metadata ({}, T={}) does not match mask ({m}, T={})",
            snap.mask_side,
            snap.frames,
            mask.frames()
        )));
    }
    if let Some(fp) = snap.mask_fingerprint {
        if fp != mask.fingerprint() {
            return Err(Error::Validation(
                "snapshot was acquired with a different mask".into(),
            ));
        }
    }
    let (n1, n2) = snap.y.dim();
    if n1 < m || n2 < m {
        return Err(Error::DimensionMismatch(format!(
            "snapshot {n1}x{n2} smaller than patch side {m}"
        )));
    }
    let t = mask.frames();
    let n = m * m;

    // only m^2 distinct patch systems exist under tiling: one per shift
    let mut systems: Vec<Array2<F>> = Vec::with_capacity(n);
    for dr in 0..m {
        for dc in 0..m {
            let pcode = crate::sensing::patch_code_of_mask(mask, dr, dc);
            systems.push(patch_system(&pcode, dict)?);
        }
    }

    let rows = stride_positions(n1, m, cfg.stride);
    let cols = stride_positions(n2, m, cfg.stride);
    let positions: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();

    let solved: Vec<(usize, usize, Result<(Array1<F>, F)>)> = positions
        .par_iter()
        .map(|&(r, c)| {
            let mut y_patch = Array1::<F>::zeros(n);
            for i in 0..m {
                for j in 0..m {
                    y_patch[i * m + j] = snap.y[[r + i, c + j]];
                }
            }
            let a = &systems[(r % m) * m + (c % m)];
            (r, c, bpdn_solve_full(a.view(), y_patch.view(), cfg))
        })
        .collect();

    let total = solved.len();
    let failures = solved.iter().filter(|(_, _, s)| s.is_err()).count();
    if failures * 100 > total {
        return Err(Error::RecoveryFailure {
            failed: failures,
            total,
        });
    }

    let mut sum = vec![Array2::<F>::zeros((n1, n2)); t];
    let mut count = Array2::<f64>::zeros((n1, n2));
    let mut residual_sum = 0.0f64;
    for (r, c, outcome) in solved {
        let (alpha, residual) = match outcome {
            Ok(v) => v,
            Err(_) => continue,
        };
        residual_sum += residual.to_f64().unwrap_or(f64::NAN);
        for fi in 0..t {
            let patch = dict.synthesize(alpha.slice(s![fi * n..(fi + 1) * n]))?;
            for i in 0..m {
                for j in 0..m {
                    sum[fi][[r + i, c + j]] += patch[i * m + j];
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                count[[r + i, c + j]] += 1.0;
            }
        }
    }

    let mut frames = Vec::with_capacity(t);
    for fi in 0..t {
        let mut frame = Array2::<F>::zeros((n1, n2));
        for r in 0..n1 {
            for c in 0..n2 {
                if count[[r, c]] > 0.0 {
                    frame[[r, c]] = sum[fi][[r, c]] / F::of(count[[r, c]]);
                }
            }
        }
        frames.push(frame);
    }
    fill_uncovered(&mut frames, &count);

    let report = RecoveryReport {
        patches: total,
        failures,
        mean_residual: if total > failures {
            residual_sum / (total - failures) as f64
        } else {
            f64::NAN
        },
        rrmse: None,
    };
    Ok((FrameStack::new(frames)?, report))
}

/// Fills pixels no successful patch covered with the mean of their covered
/// 4-neighbors, dilating until everything is covered.
fn fill_uncovered<F: Real>(frames: &mut [Array2<F>], count: &Array2<f64>) {
    let (n1, n2) = count.dim();
    let mut covered = count.mapv(|c| c > 0.0);
    if covered.iter().all(|&c| c) {
        return;
    }
    loop {
        let mut progressed = false;
        let snapshot = covered.clone();
        for r in 0..n1 {
            for c in 0..n2 {
                if snapshot[[r, c]] {
                    continue;
                }
                let neighbors: Vec<(usize, usize)> = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ]
                .into_iter()
                .filter(|&(rr, cc)| rr < n1 && cc < n2 && snapshot[[rr, cc]])
                .collect();
                if neighbors.is_empty() {
                    continue;
                }
                for frame in frames.iter_mut() {
                    let mut acc = F::zero();
                    for &(rr, cc) in &neighbors {
                        acc += frame[[rr, cc]];
                    }
                    frame[[r, c]] = acc / F::of(neighbors.len() as f64);
                }
                covered[[r, c]] = true;
                progressed = true;
            }
        }
        if !progressed || covered.iter().all(|&c| c) {
            break;
        }
    }
}

/// `T = 3` specialization: recovers R, G, B planes from a panchromatic
/// coded measurement.
pub fn demosaic<F: Real>(
    snap: &Snapshot<F>,
    mask: &CodeMask<F>,
    dict: &Dictionary<F>,
    cfg: &SolverConfig<F>,
) -> Result<(FrameStack<F>, RecoveryReport)> {
    if mask.frames() != 3 {
        return Err(Error::InvalidParameter(format!(
            "demosaicing requires a 3-frame mask, got T = {}",
            mask.frames()
        )));
    }
    recover_frames(snap, mask, dict, cfg)
}
