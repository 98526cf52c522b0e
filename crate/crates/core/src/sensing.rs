//! Coded-snapshot acquisition: tiling a patch-scale mask over full frames
//! and forming the single measurement image.

use crate::coherence::{shift_mask, CodeMask, Shift};
use crate::{Error, Real, Result};
use ndarray::{Array2, Array3};

/// `T` frames of a scene (video frames, or R/G/B planes when `T = 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack<F> {
    frames: Vec<Array2<F>>,
}

impl<F: Real> FrameStack<F> {
    pub fn new(frames: Vec<Array2<F>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Validation("frame stack must be non-empty".into()));
        }
        let shape = frames[0].dim();
        if frames.iter().any(|f| f.dim() != shape) {
            return Err(Error::DimensionMismatch(
                "all frames must share the same shape".into(),
            ));
        }
        Ok(Self { frames })
    }

    pub fn count(&self) -> usize {
        self.frames.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].dim()
    }

    pub fn frame(&self, i: usize) -> &Array2<F> {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Array2<F>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Array2<F>> {
        self.frames
    }
}

/// Full-resolution code obtained by periodically tiling a patch-scale mask.
#[derive(Debug, Clone)]
pub struct TiledCode<F> {
    values: Array3<F>,
    mask_side: usize,
}

impl<F: Real> TiledCode<F> {
    pub fn frames(&self) -> usize {
        self.values.dim().0
    }

    pub fn shape(&self) -> (usize, usize) {
        let (_, n1, n2) = self.values.dim();
        (n1, n2)
    }

    pub fn mask_side(&self) -> usize {
        self.mask_side
    }

    #[inline]
    pub fn value(&self, frame: usize, row: usize, col: usize) -> F {
        self.values[[frame, row, col]]
    }
}

/// Single coded measurement image.
#[derive(Debug, Clone)]
pub struct Snapshot<F> {
    pub y: Array2<F>,
    pub mask_side: usize,
    pub frames: usize,
    pub mask_fingerprint: Option<u64>,
}

/// Periodic extension of the mask to an `N1 x N2` canvas:
/// `code(t, r, c) = mask(t, r mod m, c mod m)`.
pub fn tile<F: Real>(mask: &CodeMask<F>, n1: usize, n2: usize) -> Result<TiledCode<F>> {
    let m = mask.side();
    if n1 < m || n2 < m {
        return Err(Error::DimensionMismatch(format!(
            "image {n1}x{n2} smaller than mask side {m}"
        )));
    }
    let t = mask.frames();
    let mut values = Array3::zeros((t, n1, n2));
    for fi in 0..t {
        for r in 0..n1 {
            for c in 0..n2 {
                values[[fi, r, c]] = mask.entry(fi, r % m, c % m);
            }
        }
    }
    Ok(TiledCode {
        values,
        mask_side: m,
    })
}

/// Forms the coded snapshot `Y(r,c) = sum_t code(t,r,c) * frame_t(r,c)`.
pub fn acquire<F: Real>(stack: &FrameStack<F>, code: &TiledCode<F>) -> Result<Snapshot<F>> {
    if stack.count() != code.frames() {
        return Err(Error::DimensionMismatch(format!(
            "{} frames but code has {} planes",
            stack.count(),
            code.frames()
        )));
    }
    let (n1, n2) = stack.shape();
    if (n1, n2) != code.shape() {
        return Err(Error::DimensionMismatch(format!(
            "frame shape {:?} does not match code shape {:?}",
            stack.shape(),
            code.shape()
        )));
    }
    let mut y = Array2::zeros((n1, n2));
    for t in 0..stack.count() {
        let frame = stack.frame(t);
        for r in 0..n1 {
            for c in 0..n2 {
                y[[r, c]] += code.value(t, r, c) * frame[[r, c]];
            }
        }
    }
    Ok(Snapshot {
        y,
        mask_side: code.mask_side,
        frames: code.frames(),
        mask_fingerprint: None,
    })
}

/// Code values seen by the `m x m` patch with top-left corner `(r, c)`.
///
/// When the code is a tiling of a mask, this equals the mask circularly
/// shifted by `(r mod m, c mod m)`.
pub fn patch_code<F: Real>(
    code: &TiledCode<F>,
    r: usize,
    c: usize,
    m: usize,
) -> Result<CodeMask<F>> {
    let (n1, n2) = code.shape();
    if r + m > n1 || c + m > n2 {
        return Err(Error::DimensionMismatch(format!(
            "patch ({r},{c}) size {m} exceeds {n1}x{n2} image"
        )));
    }
    let t = code.frames();
    let mut values = Array3::zeros((t, m, m));
    for fi in 0..t {
        for i in 0..m {
            for j in 0..m {
                values[[fi, i, j]] = code.value(fi, r + i, c + j);
            }
        }
    }
    CodeMask::new(values)
}

/// Patch code straight from the mask, without materializing a tiling.
pub fn patch_code_of_mask<F: Real>(mask: &CodeMask<F>, r: usize, c: usize) -> CodeMask<F> {
    let m = mask.side();
    shift_mask(mask, Shift::wrapped(r, c, m))
}

/// Models an 8-bit sensor: quantizes the snapshot onto 256 levels spanning
/// `[0, T]`.
pub fn quantize_snapshot<F: Real>(snap: &Snapshot<F>) -> Snapshot<F> {
    let t = F::of(snap.frames as f64);
    let levels = F::of(255.0);
    let y = snap.y.mapv(|v| {
        let clamped = v.max(F::zero()).min(t);
        (clamped / t * levels).round() / levels * t
    });
    Snapshot {
        y,
        mask_side: snap.mask_side,
        frames: snap.frames,
        mask_fingerprint: snap.mask_fingerprint,
    }
}
