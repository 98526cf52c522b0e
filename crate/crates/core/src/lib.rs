//! Coded-snapshot source separation toolkit.
//!
//! A single measurement image is formed as a per-pixel weighted sum of `T`
//! frames under non-negative code masks. This crate designs the masks by
//! minimizing the mutual coherence of the effective sensing matrix (with an
//! optional circular-shift-aware objective so tiled masks stay incoherent
//! under overlapping patch-wise recovery), simulates the acquisition, and
//! recovers the frames by patch-wise basis pursuit denoising.

pub mod basis;
pub mod coherence;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod optimizer;
pub mod recovery;
pub mod sensing;

mod seed;

pub use error::{Error, Result};
pub use seed::derive_seed;

use ndarray::ScalarOperand;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

/// Scalar type the numeric kernels are generic over.
///
/// Implemented by `f32` and `f64`; all tolerances quoted in the
/// documentation assume `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum<Self>
    + ScalarOperand
    + FromStr
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and seeds.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum<T>
        + ScalarOperand
        + FromStr
        + Display
        + Debug
        + Send
        + Sync
        + 'static
{
}

/// Lower bound on mask entries. Keeps every effective column norm strictly
/// positive; negligible for a physical light modulator.
pub const MASK_FLOOR: f64 = 1e-3;

/// `MASK_FLOOR` in the working scalar type.
pub fn mask_floor<F: Real>() -> F {
    F::of(MASK_FLOOR)
}

pub type Dictionary32 = basis::Dictionary<f32>;
pub type Dictionary64 = basis::Dictionary<f64>;
pub type CodeMask32 = coherence::CodeMask<f32>;
pub type CodeMask64 = coherence::CodeMask<f64>;
pub type FrameStack32 = sensing::FrameStack<f32>;
pub type FrameStack64 = sensing::FrameStack<f64>;
pub type Snapshot32 = sensing::Snapshot<f32>;
pub type Snapshot64 = sensing::Snapshot<f64>;
