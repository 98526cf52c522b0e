//! File formats: text masks and float matrices (bit-exact round-trips via
//! shortest round-trip decimals), binary 8-bit PGM/PPM images, and the CSV
//! exports used for plots.

use crate::coherence::{CodeMask, Shift};
use crate::evaluation::ErrorMap;
use crate::sensing::FrameStack;
use crate::{Error, Real, Result};
use ndarray::{Array2, Array3};
use std::fs;
use std::io::Write as _;
use std::path::Path;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Whitespace-separated token scanner that remembers byte offsets.
struct Tokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Self { text, pos: 0 }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some((start, &self.text[start..self.pos]))
    }

    fn expect_usize(&mut self, what: &str) -> Result<usize> {
        let (off, tok) = self
            .next()
            .ok_or_else(|| parse_err(self.pos, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| parse_err(off, format!("invalid {what}: {tok:?}")))
    }

    fn expect_scalar<F: Real>(&mut self, what: &str) -> Result<(usize, F)> {
        let (off, tok) = self
            .next()
            .ok_or_else(|| parse_err(self.pos, format!("missing {what}")))?;
        let v = tok
            .parse::<F>()
            .map_err(|_| parse_err(off, format!("invalid {what}: {tok:?}")))?;
        Ok((off, v))
    }
}

// --- masks ------------------------------------------------------------------

/// Serializes a mask: header `m T floor`, then one blank-line-separated
/// `m x m` block of shortest round-trip decimals per frame.
pub fn write_mask<F: Real>(path: impl AsRef<Path>, mask: &CodeMask<F>) -> Result<()> {
    let mut out = String::new();
    let m = mask.side();
    let t = mask.frames();
    out.push_str(&format!("{m} {t} {}\n", crate::MASK_FLOOR));
    for fi in 0..t {
        out.push('\n');
        for r in 0..m {
            let row: Vec<String> = (0..m).map(|c| mask.entry(fi, r, c).to_string()).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_mask<F: Real>(path: impl AsRef<Path>) -> Result<CodeMask<F>> {
    let text = fs::read_to_string(path)?;
    let mut toks = Tokens::new(&text);
    let m = toks.expect_usize("mask side")?;
    let t = toks.expect_usize("frame count")?;
    let (_, floor) = toks.expect_scalar::<F>("floor")?;
    if m == 0 || t == 0 {
        return Err(parse_err(0, "mask dimensions must be positive"));
    }
    let mut values = Array3::<F>::zeros((t, m, m));
    for fi in 0..t {
        for r in 0..m {
            for c in 0..m {
                let (off, v) = toks.expect_scalar::<F>("mask entry")?;
                if v < floor || v > F::one() {
                    return Err(Error::Validation(format!(
                        "mask entry {v} at byte {off} outside [{floor}, 1]"
                    )));
                }
                values[[fi, r, c]] = v;
            }
        }
    }
    if let Some((off, tok)) = toks.next() {
        return Err(parse_err(
            off,
            format!("trailing content {tok:?} after {t}x{m}x{m} entries"),
        ));
    }
    CodeMask::new(values)
}

// --- float matrices ---------------------------------------------------------

/// Header `rows cols`, then one line of decimals per row.
pub fn write_matrix<F: Real>(path: impl AsRef<Path>, matrix: &Array2<F>) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let mut out = String::new();
    out.push_str(&format!("{rows} {cols}\n"));
    for r in 0..rows {
        let row: Vec<String> = (0..cols).map(|c| matrix[[r, c]].to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix<F: Real>(path: impl AsRef<Path>) -> Result<Array2<F>> {
    let text = fs::read_to_string(path)?;
    let mut toks = Tokens::new(&text);
    let rows = toks.expect_usize("row count")?;
    let cols = toks.expect_usize("column count")?;
    let mut out = Array2::<F>::zeros((rows, cols));
    for r in 0..rows {
        for c in 0..cols {
            let (_, v) = toks.expect_scalar::<F>("matrix entry")?;
            out[[r, c]] = v;
        }
    }
    if let Some((off, tok)) = toks.next() {
        return Err(parse_err(
            off,
            format!("trailing content {tok:?} after {rows}x{cols} entries"),
        ));
    }
    Ok(out)
}

// --- netpbm images ----------------------------------------------------------

struct PnmHeader {
    width: usize,
    height: usize,
    maxval: usize,
    payload_start: usize,
}

/// Parses a binary PNM header (`P5` or `P6`), honoring `#` comments.
fn parse_pnm_header(data: &[u8], magic: &str) -> Result<PnmHeader> {
    if data.len() < 2 || &data[0..2] != magic.as_bytes() {
        return Err(parse_err(0, format!("expected {magic} header")));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(start, "expected numeric header field"));
        }
        let text = std::str::from_utf8(&data[start..pos])
            .map_err(|_| parse_err(start, "non-ascii header field"))?;
        *field = text
            .parse()
            .map_err(|_| parse_err(start, format!("invalid header field {text:?}")))?;
    }
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(parse_err(pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(2, format!("unsupported maxval {maxval}, need 8-bit")));
    }
    Ok(PnmHeader {
        width,
        height,
        maxval,
        payload_start: pos,
    })
}

/// Reads a binary 8-bit PGM (`P5`) image, normalizing values to `[0, 1]`.
pub fn read_pgm<F: Real>(path: impl AsRef<Path>) -> Result<Array2<F>> {
    let data = fs::read(path)?;
    let h = parse_pnm_header(&data, "P5")?;
    let need = h.width * h.height;
    let payload = &data[h.payload_start..];
    if payload.len() < need {
        return Err(parse_err(
            h.payload_start + payload.len(),
            format!("truncated payload: have {}, need {need}", payload.len()),
        ));
    }
    let maxval = F::of(h.maxval as f64);
    Ok(Array2::from_shape_fn((h.height, h.width), |(r, c)| {
        F::of(payload[r * h.width + c] as f64) / maxval
    }))
}

/// Writes a `[0, 1]` image as binary 8-bit PGM.
pub fn write_pgm<F: Real>(path: impl AsRef<Path>, image: &Array2<F>) -> Result<()> {
    let (height, width) = image.dim();
    let mut out = Vec::with_capacity(width * height + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    for r in 0..height {
        for c in 0..width {
            let v = image[[r, c]].to_f64().unwrap_or(0.0);
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Reads a binary 8-bit PPM (`P6`) into a 3-plane stack ordered R, G, B.
pub fn read_ppm<F: Real>(path: impl AsRef<Path>) -> Result<FrameStack<F>> {
    let data = fs::read(path)?;
    let h = parse_pnm_header(&data, "P6")?;
    let need = 3 * h.width * h.height;
    let payload = &data[h.payload_start..];
    if payload.len() < need {
        return Err(parse_err(
            h.payload_start + payload.len(),
            format!("truncated payload: have {}, need {need}", payload.len()),
        ));
    }
    let maxval = F::of(h.maxval as f64);
    let planes = (0..3)
        .map(|ch| {
            Array2::from_shape_fn((h.height, h.width), |(r, c)| {
                F::of(payload[3 * (r * h.width + c) + ch] as f64) / maxval
            })
        })
        .collect();
    FrameStack::new(planes)
}

/// Writes a 3-plane R, G, B stack as binary 8-bit PPM.
pub fn write_ppm<F: Real>(path: impl AsRef<Path>, stack: &FrameStack<F>) -> Result<()> {
    if stack.count() != 3 {
        return Err(Error::InvalidParameter(format!(
            "PPM output needs 3 planes, got {}",
            stack.count()
        )));
    }
    let (height, width) = stack.shape();
    let mut out = Vec::with_capacity(3 * width * height + 32);
    out.extend_from_slice(format!("P6\n{width} {height}\n255\n").as_bytes());
    for r in 0..height {
        for c in 0..width {
            for ch in 0..3 {
                let v = stack.frame(ch)[[r, c]].to_f64().unwrap_or(0.0);
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

// --- CSV exports ------------------------------------------------------------

/// Descent-profile export: `iteration,objective`.
pub fn write_trace_csv<F: Real>(path: impl AsRef<Path>, objective: &[F]) -> Result<()> {
    let mut out = String::from("iteration,objective\n");
    for (i, v) in objective.iter().enumerate() {
        out.push_str(&format!("{i},{v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Error-map export: `s,T,mean_rrmse,trials,failures`.
pub fn write_error_map_csv<F: Real>(path: impl AsRef<Path>, map: &ErrorMap<F>) -> Result<()> {
    let mut out = String::from("s,T,mean_rrmse,trials,failures\n");
    for (ti, &t) in map.frame_counts.iter().enumerate() {
        for (si, &s) in map.sparsities.iter().enumerate() {
            out.push_str(&format!(
                "{s},{t},{},{},{}\n",
                map.mean_rrmse[[ti, si]],
                map.trials,
                map.failures[[ti, si]]
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Shift-coherence export: `dr,dc,coherence`.
pub fn write_shift_table_csv<F: Real>(
    path: impl AsRef<Path>,
    table: &[(Shift, F)],
) -> Result<()> {
    let mut out = String::from("dr,dc,coherence\n");
    for (z, v) in table {
        out.push_str(&format!("{},{},{v}\n", z.dr, z.dc));
    }
    fs::write(path, out)?;
    Ok(())
}
