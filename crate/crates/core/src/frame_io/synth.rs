//! Deterministic synthetic test sequences.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LumaFrame, Sequence, MIN_SEQUENCE_LEN};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// Smooth periodic texture translated by `(dx, dy)` per frame.
    Translate,
    /// White noise translated by `(dx, dy)` per frame.
    NoisePan,
    /// 8-pixel checkerboard over a ramp, translated by `(dx, dy)` per frame.
    CheckerDrift,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Translate => "translate",
            SynthKind::NoisePan => "noise-pan",
            SynthKind::CheckerDrift => "checker-drift",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(SynthKind::Translate),
            "noise-pan" => Ok(SynthKind::NoisePan),
            "checker-drift" => Ok(SynthKind::CheckerDrift),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub dx: i32,
    pub dy: i32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn translate(frames: usize, width: usize, height: usize, seed: u64) -> Self {
        Self {
            kind: SynthKind::Translate,
            frames,
            width,
            height,
            dx: 1,
            dy: 0,
            seed,
        }
    }
}

// Three passes of a circular 5-tap box blur, which keeps the texture periodic.
fn smooth_periodic(w: usize, h: usize, mut img: Vec<f64>) -> Vec<f64> {
    const R: isize = 2;
    let norm = (2 * R + 1) as f64;
    for _ in 0..3 {
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-R..=R)
                    .map(|d| img[y * w + (x as isize + d).rem_euclid(w as isize) as usize])
                    .sum();
                tmp[y * w + x] = s / norm;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let s: f64 = (-R..=R)
                    .map(|d| tmp[(y as isize + d).rem_euclid(h as isize) as usize * w + x])
                    .sum();
                img[y * w + x] = s / norm;
            }
        }
    }
    img
}

fn stretch(img: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let min = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = (max - min).max(1e-12);
    img.iter()
        .map(|&v| crate::to_sample(lo + (v - min) / range * (hi - lo)))
        .collect()
}

fn base_image(spec: &SynthSpec) -> Vec<u8> {
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        SynthKind::Translate => {
            let noise: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
            stretch(&smooth_periodic(w, h, noise), 16.0, 240.0)
        }
        SynthKind::NoisePan => (0..w * h).map(|_| rng.gen::<u8>()).collect(),
        SynthKind::CheckerDrift => {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let check = if (x / 8 + y / 8) % 2 == 0 { 60.0 } else { 0.0 };
                    let ramp = 40.0 * (std::f64::consts::TAU * x as f64 / w as f64 + phase).sin();
                    crate::to_sample(100.0 + check + ramp)
                })
                .collect()
        }
    }
}

/// Builds a synthetic sequence; frame `t` is the base image shifted by
/// `(t·dx, t·dy)` with wrap-around. Pure in its arguments.
pub fn synthesize_sequence(spec: &SynthSpec) -> Result<Sequence> {
    if spec.frames < MIN_SEQUENCE_LEN {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SEQUENCE_LEN} frames, got {}",
            spec.frames
        )));
    }
    let (w, h) = (spec.width, spec.height);
    // Validates the extents before any work happens.
    LumaFrame::new(w, h, vec![0; w * h])?;
    let base = base_image(spec);
    let frames = (0..spec.frames)
        .map(|t| {
            let sx = (t as i64 * i64::from(spec.dx)).rem_euclid(w as i64) as usize;
            let sy = (t as i64 * i64::from(spec.dy)).rem_euclid(h as i64) as usize;
            let samples = (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    base[((y + h - sy) % h) * w + (x + w - sx) % w]
                })
                .collect();
            LumaFrame::new(w, h, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Sequence::new(spec.kind.to_string(), frames)
}
