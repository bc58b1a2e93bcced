//! Multi-frame quality enhancement for compressed luma video.
//!
//! The pipeline runs in stages, each with its own module:
//!
//! 1. [`frame_io`] loads or synthesizes raw luma sequences (PGM frames).
//! 2. [`degrader`] compresses them with block-DCT quantization under a
//!    per-frame QP schedule, producing a fluctuating quality pattern.
//! 3. [`metrics`] measures per-frame PSNR/SSIM and marks peak quality
//!    frames (PQFs) as strict local PSNR maxima.
//! 4. [`dbn`] squeezes the (PSNR, SSIM, QP) rows through a two-layer RBM
//!    stack with a softmax head, yielding one scalar per frame.
//! 5. [`detector`] labels PQFs from that scalar track with a Bi-LSTM and a
//!    rule-based refinement pass.
//! 6. [`mc`] and [`qe`] form the multi-frame CNN: motion compensation of the
//!    neighbouring PQFs followed by residual enhancement of each non-PQF,
//!    trained jointly by [`trainer`].
//! 7. [`pipeline`] wires the stages to files in a work directory.
//!
//! Every trainable piece is built on the small reverse-mode engine in
//! [`tensor`], which ships its own finite-difference gradient checker.

pub mod dbn;
pub mod degrader;
pub mod detector;
mod error;
pub mod frame_io;
pub mod mc;
pub mod metrics;
pub mod pipeline;
pub mod qe;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Rounds half away from zero, the convention used for every float-to-sample
/// conversion in the crate.
#[inline]
pub(crate) fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Clamps and rounds a float intensity in sample units to an 8-bit value.
#[inline]
pub(crate) fn to_sample(v: f64) -> u8 {
    round_half_away(v.clamp(0.0, 255.0)) as u8
}
