//! Multi-start projected gradient descent on (circular) soft coherence.

use crate::basis::Dictionary;
use crate::coherence::{
    circular_soft_coherence, circular_soft_coherence_with_grad, exact_coherence, soft_coherence,
    soft_coherence_with_grad, CodeMask,
};
use crate::{derive_seed, mask_floor, Error, Real, Result};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// Settings for one design run.
#[derive(Debug, Clone)]
pub struct DesignConfig<F> {
    pub side: usize,
    pub frames: usize,
    /// Soft-max sharpness. Large values track the hard maximum; small
    /// values drift toward average coherence.
    pub theta: F,
    /// Pool all circular shifts into the objective.
    pub circular: bool,
    pub starts: usize,
    pub max_iters: usize,
    pub step0: F,
    pub shrink: F,
    pub grow: F,
    /// Stop a start when the relative objective decrease over
    /// [`Self::tol_window`] accepted iterations falls below this.
    pub tol: F,
    pub tol_window: usize,
    pub seed: u64,
}

impl<F: Real> DesignConfig<F> {
    pub fn new(side: usize, frames: usize) -> Self {
        Self {
            side,
            frames,
            theta: F::of(1000.0),
            circular: false,
            starts: 20,
            max_iters: 2000,
            step0: F::of(0.1),
            shrink: F::of(0.5),
            grow: F::of(1.2),
            tol: F::of(1e-7),
            tol_window: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 || self.frames == 0 {
            return Err(Error::InvalidParameter(
                "side and frame count must be positive".into(),
            ));
        }
        if self.starts == 0 {
            return Err(Error::InvalidParameter("starts must be at least 1".into()));
        }
        if !(self.shrink > F::zero() && self.shrink < F::one() && self.grow > F::one()) {
            return Err(Error::InvalidParameter(
                "line search requires 0 < shrink < 1 < grow".into(),
            ));
        }
        if !(self.tol > F::zero()) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        if !(self.theta > F::zero()) {
            return Err(Error::InvalidParameter("theta must be positive".into()));
        }
        if !(self.step0 > F::zero()) {
            return Err(Error::InvalidParameter("step0 must be positive".into()));
        }
        Ok(())
    }
}

/// What happened during a design run.
#[derive(Debug, Clone)]
pub struct DesignTrace<F> {
    /// Accepted objective values of the winning start, initial value first.
    pub objective: Vec<F>,
    /// Final objective of every start.
    pub start_finals: Vec<F>,
    /// Index of the winning start (lowest final objective, ties to the
    /// lowest index).
    pub winner: usize,
    /// Hard coherence of the returned mask.
    pub final_exact_mu: F,
}

/// Mask with entries i.i.d. uniform on `[MASK_FLOOR, 1]`.
pub fn random_mask<F: Real>(side: usize, frames: usize, seed: u64) -> Result<CodeMask<F>> {
    if side == 0 || frames == 0 {
        return Err(Error::InvalidParameter(
            "side and frame count must be positive".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let lo = crate::MASK_FLOOR;
    let mut values = Array3::zeros((frames, side, side));
    for t in 0..frames {
        for r in 0..side {
            for c in 0..side {
                values[[t, r, c]] = F::of(rng.gen_range(lo..=1.0));
            }
        }
    }
    CodeMask::new(values)
}

struct StartOutcome<F> {
    mask: Option<CodeMask<F>>,
    trace: Vec<F>,
    final_value: F,
}

fn clamp_step<F: Real>(mask: &Array3<F>, grad: &Array3<F>, step: F) -> Array3<F> {
    let floor = mask_floor::<F>();
    let mut out = mask - &(grad * step);
    out.mapv_inplace(|v| v.max(floor).min(F::one()));
    out
}

fn run_start<F: Real>(
    cfg: &DesignConfig<F>,
    dict: &Dictionary<F>,
    seed: u64,
) -> Result<StartOutcome<F>> {
    let objective_value = |m: &CodeMask<F>| -> Result<F> {
        if cfg.circular {
            circular_soft_coherence(m, dict, cfg.theta)
        } else {
            soft_coherence(m, dict, cfg.theta)
        }
    };
    let objective_with_grad = |m: &CodeMask<F>| -> Result<(F, Array3<F>)> {
        if cfg.circular {
            circular_soft_coherence_with_grad(m, dict, cfg.theta)
        } else {
            soft_coherence_with_grad(m, dict, cfg.theta)
        }
    };

    let mut mask = random_mask::<F>(cfg.side, cfg.frames, seed)?;
    let (mut value, mut grad) = objective_with_grad(&mask)?;
    let mut trace = vec![value];
    let mut step = cfg.step0;
    let step_min = F::of(1e-15);
    let mut accepted = 0usize;

    'outer: for _ in 0..cfg.max_iters {
        // backtrack until the objective decreases
        loop {
            let proposal = CodeMask::new(clamp_step(mask.values(), &grad, step))?;
            let new_value = objective_value(&proposal)?;
            if new_value < value {
                mask = proposal;
                value = new_value;
                trace.push(value);
                accepted += 1;
                step *= cfg.grow;
                break;
            }
            step *= cfg.shrink;
            if step < step_min {
                break 'outer;
            }
        }
        // plateau detection over a trailing window of accepted iterations
        if accepted >= cfg.tol_window {
            let prev = trace[trace.len() - 1 - cfg.tol_window];
            let rel = (prev - value).abs() / prev.abs().max(F::of(1e-30));
            if rel < cfg.tol {
                break;
            }
        }
        let refreshed = objective_with_grad(&mask)?;
        grad = refreshed.1;
    }

    Ok(StartOutcome {
        mask: if accepted > 0 { Some(mask) } else { None },
        final_value: value,
        trace,
    })
}

/// Designs a mask by running `starts` independent projected descents from
/// random initializations and keeping the start with the lowest final
/// objective.
pub fn design<F: Real>(
    cfg: &DesignConfig<F>,
    dict: &Dictionary<F>,
) -> Result<(CodeMask<F>, DesignTrace<F>)> {
    cfg.validate()?;
    if dict.side() != cfg.side {
        return Err(Error::DimensionMismatch(format!(
            "basis side {} does not match design side {}",
            dict.side(),
            cfg.side
        )));
    }

    let outcomes: Vec<Result<StartOutcome<F>>> = (0..cfg.starts)
        .into_par_iter()
        .map(|i| run_start(cfg, dict, derive_seed(cfg.seed, i as u64)))
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut winner: Option<usize> = None;
    for (i, o) in outcomes.iter().enumerate() {
        if o.mask.is_none() {
            continue;
        }
        match winner {
            Some(w) if outcomes[w].final_value <= o.final_value => {}
            _ => winner = Some(i),
        }
    }
    let winner = winner.ok_or_else(|| {
        Error::OptimizationFailed("no start accepted a descent step before step underflow".into())
    })?;

    let mask = outcomes[winner].mask.clone().expect("winner has a mask");
    let final_exact_mu = exact_coherence(&mask, dict)?.exact_mu;
    let trace = DesignTrace {
        objective: outcomes[winner].trace.clone(),
        start_finals: outcomes.iter().map(|o| o.final_value).collect(),
        winner,
        final_exact_mu,
    };
    Ok((mask, trace))
}
