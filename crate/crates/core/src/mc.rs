//! Motion compensation: a three-level motion pyramid and bilinear warping.
//!
//! The coarse branches run at 1/4 and 1/2 resolution on average-pooled
//! frames; the pixel-wise branch refines at full resolution. Each branch
//! predicts a correction that is added to the motion field handed down from
//! the coarser level. Motion is measured in pixels of the grid it lives on,
//! so it is doubled whenever it is upsampled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::frame_io::LumaFrame;
use crate::tensor::{nn, Graph, ParamSet, Tensor, Var};
use crate::{Error, Result};

pub const MC_PREFIX: &str = "mc";

#[derive(Clone, Debug, PartialEq)]
pub struct McConfig {
    /// Feature maps per hidden conv layer.
    pub filters: usize,
    /// Hidden layers in each of the ×4 and ×2 branches.
    pub coarse_layers: usize,
    /// Hidden layers in the pixel-wise branch (the head is one more).
    pub pixel_layers: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            filters: 24,
            coarse_layers: 3,
            pixel_layers: 4,
        }
    }
}

/// Per-pixel displacement in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    pub width: usize,
    pub height: usize,
    pub mx: Vec<f64>,
    pub my: Vec<f64>,
}

impl MotionField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            mx: vec![0.0; width * height],
            my: vec![0.0; width * height],
        }
    }

    /// As a `1×2×H×W` tensor, x plane first.
    pub fn to_tensor(&self) -> Tensor {
        let mut v = self.mx.clone();
        v.extend_from_slice(&self.my);
        Tensor::new(vec![1, 2, self.height, self.width], v).expect("planes match extents")
    }

    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let plane = width * height;
        if values.len() != 2 * plane {
            return Err(Error::Shape(format!(
                "motion field {width}x{height} from {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            mx: values[..plane].to_vec(),
            my: values[plane..].to_vec(),
        })
    }
}

/// A frame as a `1×1×H×W` tensor scaled to `[0, 1]`.
pub fn frame_tensor(frame: &LumaFrame) -> Tensor {
    let (w, h) = frame.dims();
    Tensor::new(vec![1, 1, h, w], frame.to_unit()).expect("frame extents")
}

#[derive(Clone, Debug)]
pub struct McSubnet {
    config: McConfig,
    params: ParamSet,
}

const BRANCHES: [&str; 3] = ["x4", "x2", "px"];

fn branch_depth(config: &McConfig, branch: &str) -> usize {
    if branch == "px" {
        config.pixel_layers
    } else {
        config.coarse_layers
    }
}

fn layer_prefix(branch: &str, layer: usize) -> String {
    format!("{MC_PREFIX}.{branch}.l{layer}")
}

fn head_prefix(branch: &str) -> String {
    format!("{MC_PREFIX}.{branch}.head")
}

impl McSubnet {
    /// Hidden layers He-uniform, PReLU slopes 0.25, heads zero so the
    /// initial motion field is zero.
    pub fn new(config: McConfig, seed: u64) -> Result<Self> {
        if config.filters == 0 || config.coarse_layers == 0 || config.pixel_layers == 0 {
            return Err(Error::InvalidArgument("motion branches need at least one layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new(seed);
        for branch in BRANCHES {
            let input = if branch == "x4" { 2 } else { 4 };
            for l in 0..branch_depth(&config, branch) {
                let p = layer_prefix(branch, l);
                let in_c = if l == 0 { input } else { config.filters };
                nn::add_conv(&mut params, &mut rng, &p, in_c, config.filters, 3)?;
                nn::add_prelu(&mut params, &p, config.filters)?;
            }
            let head = head_prefix(branch);
            nn::add_conv(&mut params, &mut rng, &head, config.filters, 2, 3)?;
            for leaf in ["w", "b"] {
                let t = params.get_mut(&format!("{head}.{leaf}")).expect("just added");
                t.values_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(Self { config, params })
    }

    /// Every parameter zero.
    pub fn zeros(config: McConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.zero_values();
        Ok(net)
    }

    /// Wraps a loaded parameter set after checking it has every tensor the
    /// configuration needs, with matching shapes.
    pub fn from_params(config: McConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "`{name}` is {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &McConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Motion from `f_p` to `f_np`, both `H×W` with `H` and `W` divisible
    /// by 4.
    pub fn estimate_motion(&self, f_p: &LumaFrame, f_np: &LumaFrame) -> Result<MotionField> {
        let mut g = Graph::new();
        let p = g.constant(frame_tensor(f_p));
        let np = g.constant(frame_tensor(f_np));
        let m = estimate_motion(&mut g, &self.params, &self.config, p, np)?;
        let (w, h) = f_p.dims();
        MotionField::from_values(w, h, g.value(m))
    }
}

fn run_branch(g: &mut Graph, params: &ParamSet, config: &McConfig, branch: &str, x: Var) -> Result<Var> {
    let mut h = x;
    for l in 0..branch_depth(config, branch) {
        let p = layer_prefix(branch, l);
        h = nn::conv(g, params, &p, h)?;
        h = nn::prelu(g, params, &p, h)?;
    }
    nn::conv(g, params, &head_prefix(branch), h)
}

fn frame_dims(g: &Graph, v: Var) -> Result<(usize, usize)> {
    match *g.shape(v) {
        [1, 1, h, w] => Ok((h, w)),
        ref s => Err(Error::Shape(format!("expected a 1x1xHxW frame, got {s:?}"))),
    }
}

// Sampling grid `1×2×H×W` holding pixel x then pixel y.
fn identity_grid(h: usize, w: usize) -> Tensor {
    let mut v = Vec::with_capacity(2 * h * w);
    for _ in 0..h {
        v.extend((0..w).map(|x| x as f64));
    }
    for y in 0..h {
        v.extend(std::iter::repeat_n(y as f64, w));
    }
    Tensor::new(vec![1, 2, h, w], v).expect("grid extents")
}

/// Bilinear warp: output pixel `(x, y)` samples `f_p` at
/// `(x + mx, y + my)`, clamped to the frame.
pub fn warp(g: &mut Graph, f_p: Var, m: Var) -> Result<Var> {
    let (h, w) = frame_dims(g, f_p)?;
    if g.shape(m) != [1, 2, h, w] {
        return Err(Error::Shape(format!(
            "motion field {:?} for a {h}x{w} frame",
            g.shape(m)
        )));
    }
    let grid = g.constant(identity_grid(h, w));
    let coords = g.add(grid, m)?;
    g.bilinear_sample(f_p, coords)
}

/// Warps a frame by a motion field outside any training graph.
pub fn warp_frame(f_p: &LumaFrame, m: &MotionField) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = g.constant(frame_tensor(f_p));
    let mv = g.constant(m.to_tensor());
    let out = warp(&mut g, p, mv)?;
    Ok(g.value(out).to_vec())
}

fn upsample_motion(g: &mut Graph, m: Var) -> Result<Var> {
    let up = g.upsample2x(m)?;
    Ok(g.scale(up, 2.0))
}

/// Pyramid motion estimation on `[0, 1]`-scaled frames. Returns a
/// `1×2×H×W` motion field.
pub fn estimate_motion(g: &mut Graph, params: &ParamSet, config: &McConfig, f_p: Var, f_np: Var) -> Result<Var> {
    let (h, w) = frame_dims(g, f_p)?;
    if frame_dims(g, f_np)? != (h, w) {
        return Err(Error::Shape(format!(
            "motion estimation between {:?} and {:?}",
            g.shape(f_p),
            g.shape(f_np)
        )));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::InvalidDimensions(format!("{w}x{h} is not divisible by 4")));
    }
    let pair = g.concat(&[f_p, f_np], 1)?;
    let quarter = g.avg_pool(pair, 4)?;
    let m4 = run_branch(g, params, config, "x4", quarter)?;

    let m4_up = upsample_motion(g, m4)?;
    let p_half = g.avg_pool(f_p, 2)?;
    let np_half = g.avg_pool(f_np, 2)?;
    let p_half_warped = warp(g, p_half, m4_up)?;
    let x2_in = g.concat(&[p_half_warped, np_half, m4_up], 1)?;
    let d2 = run_branch(g, params, config, "x2", x2_in)?;
    let m2 = g.add(m4_up, d2)?;

    let m2_up = upsample_motion(g, m2)?;
    let px_in = g.concat(&[f_p, f_np, m2_up], 1)?;
    let d1 = run_branch(g, params, config, "px", px_in)?;
    g.add(m2_up, d1)
}

/// Motion is estimated between the compressed frames and applied to the
/// raw PQF, which is compared with the raw non-PQF.
pub fn loss_mc(
    g: &mut Graph,
    params: &ParamSet,
    config: &McConfig,
    raw_pqf: Var,
    raw_non_pqf: Var,
    compressed_pqf: Var,
    compressed_non_pqf: Var,
) -> Result<Var> {
    let m = estimate_motion(g, params, config, compressed_pqf, compressed_non_pqf)?;
    let warped = warp(g, raw_pqf, m)?;
    g.mse(warped, raw_non_pqf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_motion_warp_is_identity() {
        let f = LumaFrame::new(8, 8, (0..64).map(|i| (i * 3) as u8).collect()).unwrap();
        let out = warp_frame(&f, &MotionField::zeros(8, 8)).unwrap();
        assert_eq!(out, f.to_unit());
    }

    #[test]
    fn warp_clamps_at_border() {
        let mut g = Graph::new();
        let f = g.input(vec![1, 1, 1, 2], vec![0.0, 10.0]).unwrap();
        let m = g.input(vec![1, 2, 1, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let y = warp(&mut g, f, m).unwrap();
        assert_eq!(g.value(y), &[10.0, 10.0]);
    }

    #[test]
    fn half_pixel_shift() {
        let mut g = Graph::new();
        let f = g.input(vec![1, 1, 2, 2], vec![0.0, 10.0, 20.0, 30.0]).unwrap();
        let m = g.input(vec![1, 2, 2, 2], vec![0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = warp(&mut g, f, m).unwrap();
        assert!((g.value(y)[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_net_gives_zero_motion_of_frame_shape() {
        let net = McSubnet::zeros(McConfig::default()).unwrap();
        let a = LumaFrame::filled(16, 8, 30).unwrap();
        let b = LumaFrame::filled(16, 8, 200).unwrap();
        let m = net.estimate_motion(&a, &b).unwrap();
        assert_eq!((m.width, m.height), (16, 8));
        assert!(m.mx.iter().chain(&m.my).all(|&v| v == 0.0));
    }

    #[test]
    fn fresh_net_starts_at_zero_motion() {
        let net = McSubnet::new(McConfig::default(), 5).unwrap();
        let a = LumaFrame::new(16, 16, (0..256).map(|i| (i % 251) as u8).collect()).unwrap();
        let m = net.estimate_motion(&a, &a).unwrap();
        assert!(m.mx.iter().chain(&m.my).all(|&v| v == 0.0));
    }

    #[test]
    fn pixel_branch_has_five_conv_layers() {
        let net = McSubnet::new(McConfig::default(), 1).unwrap();
        let convs = net
            .params()
            .names()
            .filter(|n| n.starts_with("mc.px.") && n.ends_with(".w"))
            .count();
        assert_eq!(convs, 5);
        assert_eq!(net.params().get("mc.px.head.w").unwrap().shape(), &[2, 24, 3, 3]);
        assert_eq!(net.params().get("mc.px.l0.w").unwrap().shape(), &[24, 4, 3, 3]);
    }

    #[test]
    fn rejects_dimensions_not_divisible_by_four() {
        let net = McSubnet::new(McConfig::default(), 1).unwrap();
        let mut g = Graph::new();
        let a = g.input(vec![1, 1, 6, 8], vec![0.0; 48]).unwrap();
        assert!(estimate_motion(&mut g, net.params(), net.config(), a, a).is_err());
    }
}
