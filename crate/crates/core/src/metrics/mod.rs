//! Per-frame quality features: PSNR, SSIM, QP and the ground-truth peak
//! quality frame (PQF) bit.

pub(crate) mod csv_io;

use std::sync::OnceLock;

pub use csv_io::{parse_features_csv, write_features_csv, FEATURES_HEADER};

use crate::degrader::QpSchedule;
use crate::frame_io::{LumaFrame, Sequence};
use crate::{Error, Result};

/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// One row of the feature table.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityRecord {
    pub frame_index: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub qp: u8,
    pub is_pqf: bool,
}

fn check_dims(a: &LumaFrame, b: &LumaFrame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InconsistentDimensions {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

/// Mean squared sample difference.
pub fn mse(a: &LumaFrame, b: &LumaFrame) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.samples().len() as f64)
}

/// PSNR in dB for an MSE in 8-bit sample units, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP)
}

pub fn psnr(a: &LumaFrame, b: &LumaFrame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> &'static [f64; SSIM_WINDOW] {
    static W: OnceLock<[f64; SSIM_WINDOW]> = OnceLock::new();
    W.get_or_init(|| {
        let c = (SSIM_WINDOW / 2) as f64;
        let mut w: [f64; SSIM_WINDOW] =
            std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    })
}

// Valid-region separable filtering of `src` (w × h) with the SSIM window.
fn filter_valid(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let g = gaussian_window();
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = g.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(k, gk)| gk * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over every position where the 11×11 Gaussian window fits.
pub fn ssim(a: &LumaFrame, b: &LumaFrame) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidDimensions(format!(
            "{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let fa: Vec<f64> = a.samples().iter().map(|&v| f64::from(v)).collect();
    let fb: Vec<f64> = b.samples().iter().map(|&v| f64::from(v)).collect();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter_valid(&fa, w, h);
    let mu_b = filter_valid(&fb, w, h);
    let aa = filter_valid(&prod(&fa, &fa), w, h);
    let bb = filter_valid(&prod(&fb, &fb), w, h);
    let ab = filter_valid(&prod(&fa, &fb), w, h);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = aa[i] - ma * ma;
            let var_b = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2))
        })
        .sum();
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

/// Strict local maxima of a PSNR trace. Endpoints compare against their
/// single neighbour; plateaus never qualify.
pub fn ground_truth_pqf(psnr: &[f64]) -> Result<Vec<bool>> {
    let n = psnr.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "PQF labelling needs at least 3 frames, got {n}"
        )));
    }
    Ok((0..n)
        .map(|t| {
            let left = t == 0 || psnr[t] > psnr[t - 1];
            let right = t == n - 1 || psnr[t] > psnr[t + 1];
            left && right
        })
        .collect())
}

/// One [`QualityRecord`] per frame of `compressed`, measured against `raw`.
pub fn feature_table(
    raw: &Sequence,
    compressed: &Sequence,
    qp: &QpSchedule,
) -> Result<Vec<QualityRecord>> {
    if raw.len() != compressed.len() {
        return Err(Error::LengthMismatch {
            what: "raw vs compressed sequence",
            left: raw.len(),
            right: compressed.len(),
        });
    }
    if qp.len() != raw.len() {
        return Err(Error::LengthMismatch {
            what: "QP schedule vs sequence",
            left: qp.len(),
            right: raw.len(),
        });
    }
    let mut psnrs = Vec::with_capacity(raw.len());
    let mut ssims = Vec::with_capacity(raw.len());
    for (r, c) in raw.frames().iter().zip(compressed.frames()) {
        psnrs.push(psnr(r, c)?);
        ssims.push(ssim(r, c)?);
    }
    let pqf = ground_truth_pqf(&psnrs)?;
    Ok((0..raw.len())
        .map(|t| QualityRecord {
            frame_index: t,
            psnr: psnrs[t],
            ssim: ssims[t],
            qp: qp.values()[t],
            is_pqf: pqf[t],
        })
        .collect())
}
