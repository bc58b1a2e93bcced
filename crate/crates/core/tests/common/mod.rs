//! Brute-force reference implementations shared by the integration suites.
//! Nothing here calls into the library's numeric code.

#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradcases;

use mfqe_core::frame_io::LumaFrame;
use rand::Rng;

pub fn random_frame<R: Rng>(rng: &mut R, w: usize, h: usize) -> LumaFrame {
    LumaFrame::new(w, h, (0..w * h).map(|_| rng.gen()).collect()).unwrap()
}

/// PSNR straight from the definition, with the 100 dB cap for equal frames.
pub fn psnr_oracle(a: &LumaFrame, b: &LumaFrame) -> f64 {
    let (w, h) = a.dims();
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let d = a.at(x, y) as f64 - b.at(x, y) as f64;
            sum += d * d;
        }
    }
    let mse = sum / (w * h) as f64;
    if mse == 0.0 {
        return 100.0;
    }
    (10.0 * (255.0f64.powi(2) / mse).log10()).min(100.0)
}

/// Mean SSIM: for every 11×11 window position, explicit weighted means,
/// central variances and covariance with a normalized 2-D Gaussian (σ 1.5).
pub fn ssim_oracle(a: &LumaFrame, b: &LumaFrame) -> f64 {
    const N: usize = 11;
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut k = [[0.0f64; N]; N];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (w, h) = a.dims();
    let mut acc = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - N {
        for x0 in 0..=w - N {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    let wt = k[i][j] / total;
                    ma += wt * a.at(x0 + j, y0 + i) as f64;
                    mb += wt * b.at(x0 + j, y0 + i) as f64;
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..N {
                for j in 0..N {
                    let wt = k[i][j] / total;
                    let da = a.at(x0 + j, y0 + i) as f64 - ma;
                    let db = b.at(x0 + j, y0 + i) as f64 - mb;
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Describes the first way `labels` break the placement rules: at least
/// one PQF, none adjacent, consecutive PQFs at most `d_max` apart, and each
/// sequence end at most `d_max` frames from its nearest PQF.
pub fn spacing_violation(labels: &[bool], d_max: usize) -> Option<String> {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    if idx.is_empty() {
        return Some("no PQF".into());
    }
    let (first, last) = (idx[0], idx[idx.len() - 1]);
    if first > d_max || labels.len() - 1 - last > d_max {
        return Some(format!("end gap: first {first}, last {last} of {}", labels.len()));
    }
    for p in idx.windows(2) {
        if p[1] - p[0] < 2 {
            return Some(format!("adjacent PQFs at {} and {}", p[0], p[1]));
        }
        if p[1] - p[0] > d_max {
            return Some(format!("gap {} between {} and {}", p[1] - p[0], p[0], p[1]));
        }
    }
    None
}
