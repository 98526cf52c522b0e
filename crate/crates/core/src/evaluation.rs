//! Quantitative evaluation: error metrics, synthetic sparse scenes, and
//! the (sparsity, frame-count) recovery sweeps comparing random and
//! designed masks.

use crate::basis::Dictionary;
use crate::coherence::CodeMask;
use crate::optimizer::{design, random_mask, DesignConfig};
use crate::recovery::{recover_patch, SolverConfig};
use crate::sensing::FrameStack;
use crate::{derive_seed, Error, Real, Result};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Relative root mean square error `||est - truth||_2 / ||truth||_2` over
/// flattened views.
pub fn rrmse_flat<F: Real>(truth: ArrayView1<F>, estimate: ArrayView1<F>) -> Result<F> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "truth length {} vs estimate length {}",
            truth.len(),
            estimate.len()
        )));
    }
    let norm = truth.dot(&truth).sqrt();
    if !(norm > F::zero()) {
        return Err(Error::ZeroNormReference);
    }
    let mut acc = F::zero();
    for (&t, &e) in truth.iter().zip(estimate.iter()) {
        let d = e - t;
        acc += d * d;
    }
    Ok(acc.sqrt() / norm)
}

/// RRMSE between two images.
pub fn rrmse<F: Real>(truth: &Array2<F>, estimate: &Array2<F>) -> Result<F> {
    if truth.dim() != estimate.dim() {
        return Err(Error::DimensionMismatch(format!(
            "truth shape {:?} vs estimate shape {:?}",
            truth.dim(),
            estimate.dim()
        )));
    }
    let t = truth.to_shape(truth.len()).expect("contiguous");
    let e = estimate.to_shape(estimate.len()).expect("contiguous");
    rrmse_flat(t.view(), e.view())
}

/// RRMSE over the concatenation of all frames in a stack.
pub fn rrmse_stack<F: Real>(truth: &FrameStack<F>, estimate: &FrameStack<F>) -> Result<F> {
    if truth.count() != estimate.count() || truth.shape() != estimate.shape() {
        return Err(Error::DimensionMismatch(
            "frame stacks differ in shape".into(),
        ));
    }
    let flatten = |s: &FrameStack<F>| {
        let mut v = Vec::new();
        for f in s.frames() {
            v.extend(f.iter().cloned());
        }
        Array1::from_vec(v)
    };
    let t = flatten(truth);
    let e = flatten(estimate);
    rrmse_flat(t.view(), e.view())
}

/// Generates `T` patch-sized frames, each with exactly `round(s * m^2)`
/// nonzero transform coefficients at uniform random positions and standard
/// normal values.
pub fn gen_sparse_stack<F: Real>(
    dict: &Dictionary<F>,
    frames: usize,
    sparsity: f64,
    seed: u64,
) -> Result<FrameStack<F>> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sparsity fraction {sparsity} outside (0, 1]"
        )));
    }
    let m = dict.side();
    let n = m * m;
    let k = ((sparsity * n as f64).round() as usize).max(1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        let support = rand::seq::index::sample(&mut rng, n, k);
        let mut coeffs = Array1::<F>::zeros(n);
        for idx in support {
            let v: f64 = rng.sample(StandardNormal);
            coeffs[idx] = F::of(v);
        }
        let patch = dict.synthesize(coeffs.view())?;
        out.push(Array2::from_shape_fn((m, m), |(r, c)| patch[r * m + c]));
    }
    FrameStack::new(out)
}

/// Where sweep trials get their masks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    /// Fresh uniform-random mask per trial.
    Random,
    /// One mask per frame count, designed on the plain objective.
    DesignedPlain,
    /// One mask per frame count, designed on the circular objective.
    DesignedCircular,
}

#[derive(Debug, Clone)]
pub struct SweepConfig<F> {
    pub side: usize,
    pub frame_counts: Vec<usize>,
    pub sparsities: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub source: MaskSource,
    /// Budget for the per-frame-count design when `source` is designed.
    pub design_starts: usize,
    pub design_iters: usize,
    pub theta: F,
    pub solver: SolverConfig<F>,
}

impl<F: Real> SweepConfig<F> {
    pub fn new(side: usize, source: MaskSource) -> Self {
        Self {
            side,
            frame_counts: (2..=6).collect(),
            sparsities: (1..=10).map(|i| i as f64 * 0.05).collect(),
            trials: 20,
            seed: 0,
            source,
            design_starts: 8,
            design_iters: 600,
            theta: F::of(1000.0),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be >= 1".into()));
        }
        if self.frame_counts.is_empty() || self.sparsities.is_empty() {
            return Err(Error::InvalidParameter("empty sweep grid".into()));
        }
        if self.sparsities.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::InvalidParameter(
                "sparsity fractions must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |word: u64| {
            for b in word.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(self.side as u64);
        for &t in &self.frame_counts {
            eat(t as u64);
        }
        for &s in &self.sparsities {
            eat(s.to_bits());
        }
        eat(self.trials as u64);
        eat(self.seed);
        eat(match self.source {
            MaskSource::Random => 0,
            MaskSource::DesignedPlain => 1,
            MaskSource::DesignedCircular => 2,
        });
        h
    }
}

/// Mean RRMSE per `(s, T)` cell.
#[derive(Debug, Clone)]
pub struct ErrorMap<F> {
    pub sparsities: Vec<f64>,
    pub frame_counts: Vec<usize>,
    /// Rows indexed by frame count, columns by sparsity.
    pub mean_rrmse: Array2<F>,
    pub failures: Array2<usize>,
    pub trials: usize,
    pub config_hash: u64,
}

impl<F: Real> ErrorMap<F> {
    pub fn cell(&self, t_index: usize, s_index: usize) -> F {
        self.mean_rrmse[[t_index, s_index]]
    }
}

/// Runs the full recovery sweep at patch scale: per cell, `trials`
/// synthetic sparse stacks are sensed with the configured mask source and
/// recovered, and their stack RRMSEs averaged.
pub fn run_sweep<F: Real>(cfg: &SweepConfig<F>, dict: &Dictionary<F>) -> Result<ErrorMap<F>> {
    cfg.validate()?;
    if dict.side() != cfg.side {
        return Err(Error::DimensionMismatch(format!(
            "basis side {} does not match sweep side {}",
            dict.side(),
            cfg.side
        )));
    }
    let m = cfg.side;
    let n = m * m;

    // designed sources share one mask per frame count
    let mut designed: Vec<Option<CodeMask<F>>> = vec![None; cfg.frame_counts.len()];
    if cfg.source != MaskSource::Random {
        for (ti, &t) in cfg.frame_counts.iter().enumerate() {
            let mut dcfg = DesignConfig::<F>::new(m, t);
            dcfg.starts = cfg.design_starts;
            dcfg.max_iters = cfg.design_iters;
            dcfg.theta = cfg.theta;
            dcfg.circular = cfg.source == MaskSource::DesignedCircular;
            dcfg.seed = derive_seed(cfg.seed, 0xD519 + ti as u64);
            let (mask, _) = design(&dcfg, dict)?;
            designed[ti] = Some(mask);
        }
    }

    let cells: Vec<(usize, usize)> = (0..cfg.frame_counts.len())
        .flat_map(|ti| (0..cfg.sparsities.len()).map(move |si| (ti, si)))
        .collect();

    let results: Vec<Result<(F, usize)>> = cells
        .par_iter()
        .map(|&(ti, si)| {
            let t = cfg.frame_counts[ti];
            let s = cfg.sparsities[si];
            let mut sum = F::zero();
            let mut ok = 0usize;
            let mut failures = 0usize;
            for trial in 0..cfg.trials {
                let cell_seed = derive_seed(
                    cfg.seed,
                    ((ti as u64) << 40) | ((si as u64) << 20) | trial as u64,
                );
                let stack = gen_sparse_stack(dict, t, s, cell_seed)?;
                let mask = match &designed[ti] {
                    Some(mask) => mask.clone(),
                    None => random_mask::<F>(m, t, derive_seed(cell_seed, 1))?,
                };
                // patch-scale acquisition: y = sum_t phi_t .* x_t
                let flat = mask.flat();
                let mut y = Array1::<F>::zeros(n);
                for (fi, frame) in stack.frames().iter().enumerate() {
                    for r in 0..m {
                        for c in 0..m {
                            y[r * m + c] += flat[[fi, r * m + c]] * frame[[r, c]];
                        }
                    }
                }
                match recover_patch(y.view(), &mask, dict, &cfg.solver) {
                    Ok(frames) => {
                        let est = FrameStack::new(
                            frames
                                .iter()
                                .map(|p| Array2::from_shape_fn((m, m), |(r, c)| p[r * m + c]))
                                .collect(),
                        )?;
                        sum += rrmse_stack(&stack, &est)?;
                        ok += 1;
                    }
                    Err(Error::SolverFailure { .. }) => failures += 1,
                    Err(e) => return Err(e),
                }
            }
            let mean = if ok > 0 {
                sum / F::of(ok as f64)
            } else {
                F::nan()
            };
            Ok((mean, failures))
        })
        .collect();

    let mut mean_rrmse = Array2::<F>::zeros((cfg.frame_counts.len(), cfg.sparsities.len()));
    let mut failures = Array2::<usize>::zeros((cfg.frame_counts.len(), cfg.sparsities.len()));
    for (&(ti, si), res) in cells.iter().zip(results) {
        let (mean, fail) = res?;
        mean_rrmse[[ti, si]] = mean;
        failures[[ti, si]] = fail;
    }

    Ok(ErrorMap {
        sparsities: cfg.sparsities.clone(),
        frame_counts: cfg.frame_counts.clone(),
        mean_rrmse,
        failures,
        trials: cfg.trials,
        config_hash: cfg.fingerprint(),
    })
}

/// Elementwise `a - b`; entries may be negative.
pub fn diff_map<F: Real>(a: &ErrorMap<F>, b: &ErrorMap<F>) -> Result<ErrorMap<F>> {
    if a.sparsities != b.sparsities || a.frame_counts != b.frame_counts {
        return Err(Error::DimensionMismatch(
            "error maps cover different grids".into(),
        ));
    }
    Ok(ErrorMap {
        sparsities: a.sparsities.clone(),
        frame_counts: a.frame_counts.clone(),
        mean_rrmse: &a.mean_rrmse - &b.mean_rrmse,
        failures: &a.failures + &b.failures,
        trials: a.trials,
        config_hash: a.config_hash ^ b.config_hash,
    })
}
