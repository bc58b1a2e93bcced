use std::collections::HashMap;

use rand::Rng;

use super::conv::{conv_backward, conv_forward, ConvGeom, Padding};
use super::gemm::gemm;
use super::{numel, ParamSet, Tensor};
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the old running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch normalization mode, carrying the current running statistics.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with batch statistics; the caller receives updated running
    /// statistics.
    Train { running_mean: &'a [f64], running_var: &'a [f64] },
    /// Normalize with the supplied running statistics.
    Infer { running_mean: &'a [f64], running_var: &'a [f64] },
}

/// Running statistics produced by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Prelu {
        x: Var,
        alpha: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Softmax(Var),
    Mse(Var, Var),
    Sum(Var),
    Mean(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    AvgPool {
        x: Var,
        factor: usize,
    },
    Upsample2x(Var),
    BilinearSample {
        image: Var,
        coords: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// A recorded computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: HashMap<String, Var>,
    binding_order: Vec<String>,
    state_updates: Vec<(String, Vec<f64>)>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// Splits a shape around `axis` into (outer, extent, inner) products.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

// Two-tap linear interpolation weights for doubling an extent.
fn upsample_taps(src: usize, dst: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, pos - i0 as f64)
}

// Bilinear tap positions and weights for one clamped sample point.
struct BilinearTap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: f64,
    wy: f64,
    x_inside: bool,
    y_inside: bool,
}

fn bilinear_tap(cx: f64, cy: f64, w: usize, h: usize) -> BilinearTap {
    let xmax = (w - 1) as f64;
    let ymax = (h - 1) as f64;
    let x = cx.clamp(0.0, xmax);
    let y = cy.clamp(0.0, ymax);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    BilinearTap {
        x0,
        x1: (x0 + 1).min(w - 1),
        y0,
        y1: (y0 + 1).min(h - 1),
        wx: x - x0 as f64,
        wy: y - y0 as f64,
        x_inside: cx > 0.0 && cx < xmax,
        y_inside: cy > 0.0 && cy < ymax,
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are consistent")
    }

    /// A constant input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.values, Op::Leaf, false)
    }

    pub fn input(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        Ok(self.constant(Tensor::new(shape, values)?))
    }

    /// Leaf that receives a gradient but is not bound to any parameter name.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.values, Op::Leaf, true)
    }

    /// Binds a named parameter. Binding the same name again returns the
    /// same node, so gradients from every use accumulate.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.bindings.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
        let v = self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, t.requires_grad());
        self.bindings.insert(name.to_string(), v);
        self.binding_order.push(name.to_string());
        Ok(v)
    }

    /// Parameter names bound so far, in binding order.
    pub fn bindings(&self) -> impl Iterator<Item = (&str, Var)> {
        self.binding_order.iter().map(move |n| (n.as_str(), self.bindings[n]))
    }

    /// Queues a non-gradient state change (e.g. batch-norm running
    /// statistics) for [`ParamSet::apply_state`].
    pub fn record_state(&mut self, name: impl Into<String>, values: Vec<f64>) {
        self.state_updates.push((name.into(), values));
    }

    pub fn take_state_updates(&mut self) -> Vec<(String, Vec<f64>)> {
        std::mem::take(&mut self.state_updates)
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(self.shape(a).to_vec(), value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.rg(&[a]);
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, c), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {shape:?}",
                self.shape(a)
            )));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, value, Op::Reshape(a), rg))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        if let Some(b) = b {
            if self.shape(b) != [geom.out_channels] {
                return Err(Error::Shape(format!(
                    "conv2d bias {:?} for {} output channels",
                    self.shape(b),
                    geom.out_channels
                )));
            }
        }
        let value = conv_forward(&geom, self.value(x), self.value(w), b.map(|b| self.value(b)));
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(geom.out_shape(), value, Op::Conv2d { x, w, b, geom }, rg))
    }

    // Channel layout for per-channel ops: [N, C, rest...].
    fn channel_layout(&self, x: Var, what: &str) -> Result<(usize, usize, usize)> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(Error::Shape(format!("{what} needs a channel axis, got {s:?}")));
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }

    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (n, c, sp) = self.channel_layout(x, "prelu")?;
        if self.shape(alpha) != [c] {
            return Err(Error::Shape(format!(
                "prelu alpha {:?} for {c} channels",
                self.shape(alpha)
            )));
        }
        let a = self.value(alpha);
        let xv = self.value(x);
        let mut value = vec![0.0; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * sp;
                for j in base..base + sp {
                    value[j] = if xv[j] > 0.0 { xv[j] } else { a[ch] * xv[j] };
                }
            }
        }
        let rg = self.rg(&[x, alpha]);
        Ok(self.push(self.shape(x).to_vec(), value, Op::Prelu { x, alpha }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(&[x]);
        self.push(self.shape(x).to_vec(), value, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [r, c] => Ok((r, c)),
            ref s => Err(Error::Shape(format!("{what} expects a matrix, got {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut value = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, 0.0, &mut value);
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims(x, "add_row_bias")?;
        if self.shape(b) != [n] {
            return Err(Error::Shape(format!("bias {:?} for {n} columns", self.shape(b))));
        }
        let bv = self.value(b);
        let value = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % n])
            .collect();
        let rg = self.rg(&[x, b]);
        Ok(self.push(vec![m, n], value, Op::AddRowBias(x, b), rg))
    }

    /// `x·W + b` for a row-per-sample matrix `x`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| Error::Shape("softmax of a scalar".into()))?;
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(cols) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(shape, value, Op::Softmax(x), rg))
    }

    /// Mean of squared differences, as a one-element node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let n = self.value(a).len() as f64;
        let s: f64 = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![1], vec![s / n], Op::Mse(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(vec![1], vec![s], Op::Mean(x), rg)
    }

    /// Per-channel batch normalization over every axis except the channel
    /// axis. Train mode returns the updated running statistics.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<RunningStats>)> {
        let (n, c, sp) = self.channel_layout(x, "batchnorm")?;
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return Err(Error::Shape(format!(
                    "batchnorm parameter {:?} for {c} channels",
                    self.shape(p)
                )));
            }
        }
        let (rm, rv, train) = match mode {
            BnMode::Train { running_mean, running_var } => (running_mean, running_var, true),
            BnMode::Infer { running_mean, running_var } => (running_mean, running_var, false),
        };
        if rm.len() != c || rv.len() != c {
            return Err(Error::Shape(format!("running statistics for {c} channels")));
        }
        let count = n * sp;
        if train && count < 2 {
            return Err(Error::InvalidArgument(
                "training-mode batch norm needs at least 2 values per channel".into(),
            ));
        }
        let xv = self.value(x);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    s += xv[(i * c + ch) * sp..(i * c + ch + 1) * sp].iter().sum::<f64>();
                }
                let m = s / count as f64;
                let mut q = 0.0;
                for i in 0..n {
                    q += xv[(i * c + ch) * sp..(i * c + ch + 1) * sp]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
                mean[ch] = m;
                var[ch] = q / count as f64;
            }
        } else {
            mean.copy_from_slice(rm);
            var.copy_from_slice(rv);
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; xv.len()];
        let mut value = vec![0.0; xv.len()];
        for i in 0..n {
            for ch in 0..c {
                for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                    xhat[j] = (xv[j] - mean[ch]) * inv_std[ch];
                    value[j] = gv[ch] * xhat[j] + bv[ch];
                }
            }
        }
        let stats = train.then(|| RunningStats {
            mean: rm
                .iter()
                .zip(&mean)
                .map(|(r, m)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * m)
                .collect(),
            var: rv
                .iter()
                .zip(&var)
                .map(|(r, v)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * v)
                .collect(),
        });
        let rg = self.rg(&[x, gamma, beta]);
        let shape = self.shape(x).to_vec();
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        Ok((self.push(shape, value, op, rg), stats))
    }

    fn nchw(&self, x: Var, what: &str) -> Result<[usize; 4]> {
        match *self.shape(x) {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref s => Err(Error::Shape(format!("{what} expects NCHW, got {s:?}"))),
        }
    }

    /// Non-overlapping `factor`×`factor` mean pooling.
    pub fn avg_pool(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!("avg_pool by {factor} of {h}x{w}")));
        }
        let (oh, ow) = (h / factor, w / factor);
        let xv = self.value(x);
        let norm = (factor * factor) as f64;
        let mut value = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                for xx in 0..w {
                    value[(p * oh + y / factor) * ow + xx / factor] += xv[(p * h + y) * w + xx] / norm;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, c, oh, ow], value, Op::AvgPool { x, factor }, rg))
    }

    /// Bilinear ×2 upsampling with half-pixel centres and edge clamping.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw(x, "upsample2x")?;
        let (oh, ow) = (2 * h, 2 * w);
        let xv = self.value(x);
        let mut value = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                let (y0, y1, wy) = upsample_taps(h, oy);
                for ox in 0..ow {
                    let (x0, x1, wx) = upsample_taps(w, ox);
                    value[(p * oh + oy) * ow + ox] = (1.0 - wy)
                        * ((1.0 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1])
                        + wy * ((1.0 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1]);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(vec![n, c, oh, ow], value, Op::Upsample2x(x), rg))
    }

    /// Samples a `1×1×H×W` image at per-pixel positions `coords`
    /// (`1×2×Ho×Wo`, x then y) with bilinear interpolation. Positions are
    /// clamped to the image before interpolating.
    pub fn bilinear_sample(&mut self, image: Var, coords: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw(image, "bilinear_sample image")?;
        let [cn, cc, oh, ow] = self.nchw(coords, "bilinear_sample coords")?;
        if n != 1 || c != 1 || cn != 1 || cc != 2 {
            return Err(Error::Shape(format!(
                "bilinear_sample wants a 1x1xHxW image and 1x2xHoxWo coords, got {:?} and {:?}",
                self.shape(image),
                self.shape(coords)
            )));
        }
        let img = self.value(image);
        let cv = self.value(coords);
        let plane = oh * ow;
        let value = (0..plane)
            .map(|i| {
                let t = bilinear_tap(cv[i], cv[plane + i], w, h);
                (1.0 - t.wy) * ((1.0 - t.wx) * img[t.y0 * w + t.x0] + t.wx * img[t.y0 * w + t.x1])
                    + t.wy * ((1.0 - t.wx) * img[t.y1 * w + t.x0] + t.wx * img[t.y1 * w + t.x1])
            })
            .collect();
        let rg = self.rg(&[image, coords]);
        Ok(self.push(vec![1, 1, oh, ow], value, Op::BilinearSample { image, coords }, rg))
    }

    /// Concatenates along `axis`; every other extent must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Shape(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let ext = self.shape(v)[axis];
                value.extend_from_slice(&self.value(v)[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) of axis {axis} in {shape:?}",
                start + len
            )));
        }
        let (outer, ext, inner) = split_axis(&shape, axis);
        let xv = self.value(x);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            value.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(out_shape, value, Op::Slice { x, axis, start }, rg))
    }

    /// Rows of a `V×D` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, d) = self.matrix_dims(table, "gather_rows")?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!("row {bad} of a {rows}-row table")));
        }
        let tv = self.value(table);
        let mut value = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            value.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![indices.len(), d],
            value,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and
    /// scales survivors by `1 / (1 − rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let value = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(self.shape(x).to_vec(), value, Op::Dropout { x, mask }, rg))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return Err(Error::LengthMismatch {
                what: "logits vs targets",
                left: z.len(),
                right: targets.len(),
            });
        }
        let loss = z
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / z.len() as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of row-wise softmax over `logits` (N×C).
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims(logits, "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                what: "logit rows vs labels",
                left: n,
                right: labels.len(),
            });
        }
        if labels.iter().any(|&l| l >= c) {
            return Err(Error::InvalidArgument(format!("label outside {c} classes")));
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            vec![1],
            vec![loss / n as f64],
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Hash of every piecewise branch taken by the recorded computation:
    /// activation signs and bilinear cells and clamp states. Two
    /// evaluations with equal signatures lie in the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Prelu { x, .. } | Op::Relu(x) => {
                    for &v in &self.nodes[x.0].value {
                        mix(u64::from(v > 0.0));
                    }
                }
                Op::BilinearSample { image, coords } => {
                    let s = &self.nodes[image.0].shape;
                    let (hh, ww) = (s[2], s[3]);
                    let cv = &self.nodes[coords.0].value;
                    let plane = cv.len() / 2;
                    for i in 0..plane {
                        let t = bilinear_tap(cv[i], cv[plane + i], ww, hh);
                        mix(t.x0 as u64);
                        mix(t.y0 as u64);
                        mix(u64::from(t.x_inside) | u64::from(t.y_inside) << 1);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Reverse pass from a one-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        if !self.value(loss)[0].is_finite() {
            return Err(Error::NonFinite(format!("loss {}", self.value(loss)[0])));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.backprop(i, &gy, &mut grads);
            }
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        // Gradient buffer for `v`, created on first use; None if `v` does
        // not need a gradient.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let node = &nodes[v.0];
            if !node.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]);
            f(buf);
        };
        let node = &nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * bv[j];
                    }
                });
                acc(*b, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += gy[j] * av[j];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += c * d)),
            Op::Reshape(a) => acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d)),
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
                if let Some(b) = b {
                    acc(*b, &mut |g| conv_backward(geom, xv, wv, gy, None, None, Some(g)));
                }
                acc(*w, &mut |g| conv_backward(geom, xv, wv, gy, None, Some(g), None));
                acc(*x, &mut |g| conv_backward(geom, xv, wv, gy, Some(g), None, None));
            }
            Op::Prelu { x, alpha } => {
                let s = &nodes[x.0].shape;
                let (n, c, sp) = (s[0], s[1], s[2..].iter().product::<usize>());
                let xv = &nodes[x.0].value;
                let av = &nodes[alpha.0].value;
                acc(*x, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                                g[j] += if xv[j] > 0.0 { gy[j] } else { av[ch] * gy[j] };
                            }
                        }
                    }
                });
                acc(*alpha, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                                if xv[j] <= 0.0 {
                                    g[ch] += gy[j] * xv[j];
                                }
                            }
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &nodes[x.0].value;
                acc(*x, &mut |g| {
                    for j in 0..g.len() {
                        if xv[j] > 0.0 {
                            g[j] += gy[j];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |g| {
                for j in 0..g.len() {
                    g[j] += gy[j] * y[j] * (1.0 - y[j]);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |g| {
                for j in 0..g.len() {
                    g[j] += gy[j] * (1.0 - y[j] * y[j]);
                }
            }),
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |g| gemm(m, n, k, gy, false, bv, true, 1.0, g));
                acc(*b, &mut |g| gemm(k, m, n, av, true, gy, false, 1.0, g));
            }
            Op::AddRowBias(x, b) => {
                let n = nodes[b.0].value.len();
                acc(*x, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                acc(*b, &mut |g| {
                    for (j, d) in gy.iter().enumerate() {
                        g[j % n] += d;
                    }
                });
            }
            Op::Softmax(x) => {
                let cols = *node.shape.last().unwrap();
                acc(*x, &mut |g| {
                    for ((gr, yr), dr) in g.chunks_mut(cols).zip(y.chunks(cols)).zip(gy.chunks(cols)) {
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            gr[j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::Mse(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let k = 2.0 * gy[0] / av.len() as f64;
                acc(*a, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += k * (av[j] - bv[j]);
                    }
                });
                acc(*b, &mut |g| {
                    for j in 0..g.len() {
                        g[j] -= k * (av[j] - bv[j]);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += gy[0])),
            Op::Mean(x) => {
                let k = gy[0] / nodes[x.0].value.len() as f64;
                acc(*x, &mut |g| g.iter_mut().for_each(|v| *v += k));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = &nodes[x.0].shape;
                let (n, c, sp) = (s[0], s[1], s[2..].iter().product::<usize>());
                let gv = &nodes[gamma.0].value;
                let count = (n * sp) as f64;
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                            sum_dy[ch] += gy[j];
                            sum_dy_xhat[ch] += gy[j] * xhat[j];
                        }
                    }
                }
                acc(*gamma, &mut |g| g.iter_mut().zip(&sum_dy_xhat).for_each(|(g, d)| *g += d));
                acc(*beta, &mut |g| g.iter_mut().zip(&sum_dy).for_each(|(g, d)| *g += d));
                acc(*x, &mut |g| {
                    for i in 0..n {
                        for ch in 0..c {
                            let k = gv[ch] * inv_std[ch];
                            for j in (i * c + ch) * sp..(i * c + ch + 1) * sp {
                                g[j] += if *train {
                                    k * (gy[j] - sum_dy[ch] / count - xhat[j] * sum_dy_xhat[ch] / count)
                                } else {
                                    k * gy[j]
                                };
                            }
                        }
                    }
                });
            }
            Op::AvgPool { x, factor } => {
                let s = &nodes[x.0].shape;
                let (p, h, w) = (s[0] * s[1], s[2], s[3]);
                let (oh, ow) = (h / factor, w / factor);
                let norm = (factor * factor) as f64;
                acc(*x, &mut |g| {
                    for q in 0..p {
                        for yy in 0..h {
                            for xx in 0..w {
                                g[(q * h + yy) * w + xx] += gy[(q * oh + yy / factor) * ow + xx / factor] / norm;
                            }
                        }
                    }
                });
            }
            Op::Upsample2x(x) => {
                let s = &nodes[x.0].shape;
                let (p, h, w) = (s[0] * s[1], s[2], s[3]);
                let (oh, ow) = (2 * h, 2 * w);
                acc(*x, &mut |g| {
                    for q in 0..p {
                        let dst = &mut g[q * h * w..(q + 1) * h * w];
                        for oy in 0..oh {
                            let (y0, y1, wy) = upsample_taps(h, oy);
                            for ox in 0..ow {
                                let (x0, x1, wx) = upsample_taps(w, ox);
                                let d = gy[(q * oh + oy) * ow + ox];
                                dst[y0 * w + x0] += (1.0 - wy) * (1.0 - wx) * d;
                                dst[y0 * w + x1] += (1.0 - wy) * wx * d;
                                dst[y1 * w + x0] += wy * (1.0 - wx) * d;
                                dst[y1 * w + x1] += wy * wx * d;
                            }
                        }
                    }
                });
            }
            Op::BilinearSample { image, coords } => {
                let is = &nodes[image.0].shape;
                let (h, w) = (is[2], is[3]);
                let img = &nodes[image.0].value;
                let cv = &nodes[coords.0].value;
                let plane = cv.len() / 2;
                acc(*image, &mut |g| {
                    for (i, d) in gy.iter().enumerate() {
                        let t = bilinear_tap(cv[i], cv[plane + i], w, h);
                        g[t.y0 * w + t.x0] += (1.0 - t.wy) * (1.0 - t.wx) * d;
                        g[t.y0 * w + t.x1] += (1.0 - t.wy) * t.wx * d;
                        g[t.y1 * w + t.x0] += t.wy * (1.0 - t.wx) * d;
                        g[t.y1 * w + t.x1] += t.wy * t.wx * d;
                    }
                });
                acc(*coords, &mut |g| {
                    for (i, d) in gy.iter().enumerate() {
                        let t = bilinear_tap(cv[i], cv[plane + i], w, h);
                        let (i00, i01) = (img[t.y0 * w + t.x0], img[t.y0 * w + t.x1]);
                        let (i10, i11) = (img[t.y1 * w + t.x0], img[t.y1 * w + t.x1]);
                        if t.x_inside {
                            g[i] += d * ((1.0 - t.wy) * (i01 - i00) + t.wy * (i11 - i10));
                        }
                        if t.y_inside {
                            g[plane + i] += d * ((1.0 - t.wx) * (i10 - i00) + t.wx * (i11 - i01));
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let ext = nodes[v.0].shape[*axis];
                    acc(v, &mut |g| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            for (gj, d) in g[o * ext * inner..(o + 1) * ext * inner]
                                .iter_mut()
                                .zip(&gy[src..src + ext * inner])
                            {
                                *gj += d;
                            }
                        }
                    });
                    offset += ext;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, ext, inner) = split_axis(&nodes[x.0].shape, *axis);
                let len = node.shape[*axis];
                acc(*x, &mut |g| {
                    for o in 0..outer {
                        let base = (o * ext + start) * inner;
                        for (gj, d) in g[base..base + len * inner]
                            .iter_mut()
                            .zip(&gy[o * len * inner..(o + 1) * len * inner])
                        {
                            *gj += d;
                        }
                    }
                });
            }
            Op::Gather { table, indices } => {
                let d = nodes[table.0].shape[1];
                acc(*table, &mut |g| {
                    for (r, &idx) in indices.iter().enumerate() {
                        for j in 0..d {
                            g[idx * d + j] += gy[r * d + j];
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |g| {
                for j in 0..g.len() {
                    g[j] += gy[j] * mask[j];
                }
            }),
            Op::BceWithLogits { logits, targets } => {
                let z = &nodes[logits.0].value;
                let k = gy[0] / z.len() as f64;
                acc(*logits, &mut |g| {
                    for j in 0..g.len() {
                        g[j] += k * (sigmoid(z[j]) - targets[j]);
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = nodes[logits.0].shape[1];
                let k = gy[0] / labels.len() as f64;
                acc(*logits, &mut |g| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            g[r * c + j] += k * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }
}
