//! 2-D cross-correlation via im2col and GEMM.

use super::gemm::gemm;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so the output extent is `ceil(input / stride)`.
    Same,
    /// No padding.
    Valid,
}

/// Resolved geometry of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d wants NCHW input and OIHW weight, got {input:?} and {weight:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be at least 1".into()));
        }
        let [batch, in_channels, in_h, in_w] = [input[0], input[1], input[2], input[3]];
        let [out_channels, w_in, k_h, k_w] = [weight[0], weight[1], weight[2], weight[3]];
        if w_in != in_channels {
            return Err(Error::Shape(format!(
                "conv2d: input has {in_channels} channels, weight expects {w_in}"
            )));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = in_h.div_ceil(stride);
                let ow = in_w.div_ceil(stride);
                let ph = ((oh - 1) * stride + k_h).saturating_sub(in_h);
                let pw = ((ow - 1) * stride + k_w).saturating_sub(in_w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if k_h > in_h || k_w > in_w {
                    return Err(Error::Shape(format!(
                        "conv2d: {k_h}x{k_w} kernel larger than {in_h}x{in_w} input"
                    )));
                }
                ((in_h - k_h) / stride + 1, (in_w - k_w) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            batch,
            in_channels,
            out_channels,
            in_h,
            in_w,
            k_h,
            k_w,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.k_h * self.k_w
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_channels, self.out_h, self.out_w]
    }
}

// Outputs `[lo, hi)` whose tap `k` lands inside `[0, extent)`.
fn valid_range(g: &ConvGeom, k: usize, pad: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(g.stride);
    let hi = if extent + pad <= k {
        0
    } else {
        ((extent + pad - k - 1) / g.stride + 1).min(out)
    };
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let ncols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            let (ylo, yhi) = valid_range(g, ki, g.pad_top, g.in_h, g.out_h);
            for kj in 0..g.k_w {
                let (xlo, xhi) = valid_range(g, kj, g.pad_left, g.in_w, g.out_w);
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let dst = &mut col[row * ncols..(row + 1) * ncols];
                dst[..ylo * g.out_w].fill(0.0);
                dst[yhi * g.out_w..].fill(0.0);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad_top;
                    let src_row = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    out_row[..xlo].fill(0.0);
                    out_row[xhi..].fill(0.0);
                    let x0 = xlo * g.stride + kj - g.pad_left;
                    if g.stride == 1 {
                        out_row[xlo..xhi].copy_from_slice(&src_row[x0..x0 + (xhi - xlo)]);
                    } else {
                        for (i, v) in out_row[xlo..xhi].iter_mut().enumerate() {
                            *v = src_row[x0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    let ncols = g.col_cols();
    for c in 0..g.in_channels {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            let (ylo, yhi) = valid_range(g, ki, g.pad_top, g.in_h, g.out_h);
            for kj in 0..g.k_w {
                let (xlo, xhi) = valid_range(g, kj, g.pad_left, g.in_w, g.out_w);
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let src = &col[row * ncols..(row + 1) * ncols];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki - g.pad_top;
                    let x0 = xlo * g.stride + kj - g.pad_left;
                    let dst_row = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let src_row = &src[oy * g.out_w + xlo..oy * g.out_w + xhi];
                    for (i, v) in src_row.iter().enumerate() {
                        dst_row[x0 + i * g.stride] += v;
                    }
                }
            }
        }
    }
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

// Runs `f` on a reusable column buffer of `len` values (contents unspecified).
fn with_scratch<T>(len: usize, f: impl FnOnce(&mut [f64]) -> T) -> T {
    SCRATCH.with(|cell| match cell.try_borrow_mut() {
        Ok(mut buf) => {
            if buf.len() < len {
                buf.resize(len, 0.0);
            }
            f(&mut buf[..len])
        }
        Err(_) => f(&mut vec![0.0; len]),
    })
}

pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut out = vec![0.0; g.batch * g.out_channels * cols];
    let in_stride = g.in_channels * g.in_h * g.in_w;
    with_scratch(rows * cols, |col| {
        for n in 0..g.batch {
            im2col(g, &x[n * in_stride..(n + 1) * in_stride], col);
            let y = &mut out[n * g.out_channels * cols..(n + 1) * g.out_channels * cols];
            gemm(g.out_channels, rows, cols, w, false, col, false, 0.0, y);
            if let Some(b) = bias {
                for (o, &bo) in b.iter().enumerate() {
                    y[o * cols..(o + 1) * cols].iter_mut().for_each(|v| *v += bo);
                }
            }
        }
    });
    out
}

/// Accumulates input, weight and bias gradients for upstream `dy`.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_stride = g.in_channels * g.in_h * g.in_w;
    let out_stride = g.out_channels * cols;
    if let Some(db) = db {
        for n in 0..g.batch {
            let dyn_ = &dy[n * out_stride..(n + 1) * out_stride];
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dyn_[o * cols..(o + 1) * cols].iter().sum::<f64>();
            }
        }
    }
    with_scratch(rows * cols, |col| {
        if let Some(dw) = dw {
            for n in 0..g.batch {
                im2col(g, &x[n * in_stride..(n + 1) * in_stride], col);
                let dyn_ = &dy[n * out_stride..(n + 1) * out_stride];
                // dW (O × rows) += dY (O × cols) · colᵀ (cols × rows)
                gemm(g.out_channels, cols, rows, dyn_, false, col, true, 1.0, dw);
            }
        }
        if let Some(dx) = dx {
            for n in 0..g.batch {
                let dyn_ = &dy[n * out_stride..(n + 1) * out_stride];
                // dcol (rows × cols) = Wᵀ (rows × O) · dY (O × cols)
                gemm(rows, g.out_channels, cols, w, true, dyn_, false, 0.0, col);
                col2im_add(g, col, &mut dx[n * in_stride..(n + 1) * in_stride]);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_channels * g.out_h * g.out_w];
        for n in 0..g.batch {
            for o in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut s = 0.0;
                        for c in 0..g.in_channels {
                            for ki in 0..g.k_h {
                                for kj in 0..g.k_w {
                                    let iy = (oy * g.stride + ki) as isize - g.pad_top as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad_left as isize;
                                    if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                        continue;
                                    }
                                    s += x[((n * g.in_channels + c) * g.in_h + iy as usize) * g.in_w + ix as usize]
                                        * w[((o * g.in_channels + c) * g.k_h + ki) * g.k_w + kj];
                                }
                            }
                        }
                        out[((n * g.out_channels + o) * g.out_h + oy) * g.out_w + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_direct_loops() {
        for (stride, padding, h, w, k) in [
            (1, Padding::Same, 7, 5, 3),
            (2, Padding::Same, 8, 7, 3),
            (1, Padding::Valid, 6, 6, 5),
            (3, Padding::Valid, 9, 10, 2),
            (2, Padding::Same, 5, 5, 4),
        ] {
            let input = [2, 3, h, w];
            let weight = [4, 3, k, k];
            let g = ConvGeom::new(&input, &weight, stride, padding).unwrap();
            let x: Vec<f64> = (0..2 * 3 * h * w).map(|i| ((i * 7919) % 97) as f64 / 50.0 - 1.0).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 104729) % 89) as f64 / 40.0 - 1.0).collect();
            let got = conv_forward(&g, &x, &wt, None);
            let want = direct(&g, &x, &wt);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x, w), dy> must equal <x, dx> and <w, dw> for a bias-free conv.
        for (stride, padding, h, w, k) in [
            (1, Padding::Same, 7, 5, 3),
            (2, Padding::Same, 8, 7, 3),
            (3, Padding::Valid, 9, 10, 2),
            (2, Padding::Same, 5, 5, 4),
        ] {
            let g = ConvGeom::new(&[2, 3, h, w], &[4, 3, k, k], stride, padding).unwrap();
            let x: Vec<f64> = (0..2 * 3 * h * w).map(|i| ((i * 31) % 17) as f64 / 9.0 - 0.9).collect();
            let wt: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 13) % 11) as f64 / 7.0 - 0.7).collect();
            let y = direct(&g, &x, &wt);
            let dy: Vec<f64> = (0..y.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
            let mut dx = vec![0.0; x.len()];
            let mut dw = vec![0.0; wt.len()];
            conv_backward(&g, &x, &wt, &dy, Some(&mut dx), Some(&mut dw), None);
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let via_x: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
            let via_w: f64 = wt.iter().zip(&dw).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
            assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn same_padding_extents() {
        let g = ConvGeom::new(&[1, 1, 48, 48], &[8, 1, 7, 7], 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (48, 48, 3, 3));
        let g = ConvGeom::new(&[1, 1, 9, 9], &[1, 1, 3, 3], 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w), (5, 5));
        assert!(ConvGeom::new(&[1, 2, 4, 4], &[1, 3, 3, 3], 1, Padding::Same).is_err());
        assert!(ConvGeom::new(&[1, 1, 4, 4], &[1, 1, 3, 3], 0, Padding::Same).is_err());
    }
}
