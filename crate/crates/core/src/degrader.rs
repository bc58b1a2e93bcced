//! Block-DCT quantization standing in for a real codec.
//!
//! Each 8×8 block of a frame goes through an orthonormal 2-D DCT-II, every
//! coefficient is quantized uniformly with step `2^((QP − 4) / 6)`, and the
//! block is reconstructed, rounded and clamped. Frames are independent, so
//! the per-frame QP is exact ground truth.

use std::sync::OnceLock;

use crate::frame_io::{LumaFrame, Sequence};
use crate::{Error, Result};

pub const QP_MAX: u8 = 51;

/// Per-frame quantization parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QpSchedule(Vec<u8>);

impl QpSchedule {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty QP schedule".into()));
        }
        if let Some(&qp) = values.iter().find(|&&q| q > QP_MAX) {
            return Err(Error::InvalidArgument(format!("QP {qp} outside [0, {QP_MAX}]")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses one integer per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let qp: u8 = line
                .parse()
                .map_err(|_| Error::parse("qp schedule", i + 1, format!("bad QP `{line}`")))?;
            if qp > QP_MAX {
                return Err(Error::parse("qp schedule", i + 1, format!("QP {qp} > {QP_MAX}")));
            }
            values.push(qp);
        }
        Self::new(values)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|q| format!("{q}\n")).collect()
    }
}

/// `low` on every `period`-th frame starting at 0, `high` elsewhere.
pub fn alternating_schedule(n: usize, low: u8, high: u8, period: usize) -> Result<QpSchedule> {
    if low >= high {
        return Err(Error::InvalidArgument(format!(
            "low QP {low} must be below high QP {high}"
        )));
    }
    if period < 2 {
        return Err(Error::InvalidArgument(format!("period {period} must be at least 2")));
    }
    QpSchedule::new((0..n).map(|t| if t % period == 0 { low } else { high }).collect())
}

/// Parses a `low,high,period` pattern into a schedule of length `n`.
pub fn pattern_schedule(pattern: &str, n: usize) -> Result<QpSchedule> {
    let parts: Vec<&str> = pattern.split(',').map(str::trim).collect();
    let bad = || Error::InvalidArgument(format!("QP pattern `{pattern}` is not low,high,period"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let low: u8 = parts[0].parse().map_err(|_| bad())?;
    let high: u8 = parts[1].parse().map_err(|_| bad())?;
    let period: usize = parts[2].parse().map_err(|_| bad())?;
    alternating_schedule(n, low, high, period)
}

/// Quantizer step for a QP.
pub fn step_size(qp: u8) -> f64 {
    ((f64::from(qp) - 4.0) / 6.0).exp2()
}

// basis[k][n] = c(k) cos((2n + 1) kπ / 16), orthonormal.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (k, row) in b.iter_mut().enumerate() {
            let scale = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = scale
                    * ((2.0 * n as f64 + 1.0) * k as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

/// Forward 2-D DCT of an 8×8 block (row-major).
pub fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for k in 0..8 {
            tmp[y * 8 + k] = (0..8).map(|x| b[k][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..8 {
        for u in 0..8 {
            out[k * 8 + u] = (0..8).map(|y| b[k][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Inverse of [`dct8x8`].
pub fn idct8x8(coeffs: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|k| b[k][y] * coeffs[k * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|u| b[u][x] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Degrades a single frame at one QP.
pub fn degrade_frame(frame: &LumaFrame, qp: u8) -> Result<LumaFrame> {
    if qp > QP_MAX {
        return Err(Error::InvalidArgument(format!("QP {qp} outside [0, {QP_MAX}]")));
    }
    let step = step_size(qp);
    let (w, h) = frame.dims();
    let mut out = vec![0u8; w * h];
    let src = frame.samples();
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = f64::from(src[(by + y) * w + bx + x]);
                }
            }
            let mut coeffs = dct8x8(&block);
            for c in coeffs.iter_mut() {
                *c = crate::round_half_away(*c / step) * step;
            }
            let recon = idct8x8(&coeffs);
            for y in 0..8 {
                for x in 0..8 {
                    out[(by + y) * w + bx + x] = crate::to_sample(recon[y * 8 + x]);
                }
            }
        }
    }
    LumaFrame::new(w, h, out)
}

/// Degrades every frame of `seq` with its scheduled QP.
pub fn degrade(seq: &Sequence, qp: &QpSchedule) -> Result<Sequence> {
    if qp.len() != seq.len() {
        return Err(Error::LengthMismatch {
            what: "QP schedule vs sequence",
            left: qp.len(),
            right: seq.len(),
        });
    }
    let frames = seq
        .frames()
        .iter()
        .zip(qp.values())
        .map(|(f, &q)| degrade_frame(f, q))
        .collect::<Result<Vec<_>>>()?;
    Sequence::new(seq.name(), frames)
}
