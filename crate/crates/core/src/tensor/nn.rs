//! Named layers over a [`ParamSet`].
//!
//! Each `add_*` function creates the parameters of one layer under a name
//! prefix; the matching forward function binds them into a graph.

use rand::Rng;

use super::{init, BnMode, Graph, Padding, ParamSet, Tensor, Var};
use crate::{Error, Result};

pub const PRELU_INIT: f64 = 0.25;
pub const LSTM_INIT: f64 = 0.08;

fn key(prefix: &str, leaf: &str) -> String {
    format!("{prefix}.{leaf}")
}

/// Square conv kernel `out × in × k × k` (He-uniform) and zero bias.
pub fn add_conv<R: Rng + ?Sized>(
    params: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
) -> Result<()> {
    let w = init::he_uniform(rng, vec![out_c, in_c, k, k], in_c * k * k).trainable();
    params.insert(key(prefix, "w"), w)?;
    params.insert(key(prefix, "b"), Tensor::zeros(vec![out_c]).trainable())
}

/// Stride-1 same-padded convolution with bias.
pub fn conv(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &key(prefix, "w"))?;
    let b = g.param(params, &key(prefix, "b"))?;
    g.conv2d(x, w, Some(b), 1, Padding::Same)
}

pub fn add_prelu(params: &mut ParamSet, prefix: &str, channels: usize) -> Result<()> {
    params.insert(key(prefix, "alpha"), Tensor::full(vec![channels], PRELU_INIT).trainable())
}

pub fn prelu(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let a = g.param(params, &key(prefix, "alpha"))?;
    g.prelu(x, a)
}

/// Dense weight `in × out` (He-uniform) and zero bias.
pub fn add_dense<R: Rng + ?Sized>(
    params: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    inputs: usize,
    outputs: usize,
) -> Result<()> {
    let w = init::he_uniform(rng, vec![inputs, outputs], inputs).trainable();
    params.insert(key(prefix, "w"), w)?;
    params.insert(key(prefix, "b"), Tensor::zeros(vec![outputs]).trainable())
}

pub fn dense(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(params, &key(prefix, "w"))?;
    let b = g.param(params, &key(prefix, "b"))?;
    g.dense(x, w, b)
}

/// Scale 1, shift 0, running mean 0 and running variance 1.
pub fn add_batchnorm(params: &mut ParamSet, prefix: &str, channels: usize) -> Result<()> {
    params.insert(key(prefix, "gamma"), Tensor::full(vec![channels], 1.0).trainable())?;
    params.insert(key(prefix, "beta"), Tensor::zeros(vec![channels]).trainable())?;
    params.insert(key(prefix, "running_mean"), Tensor::zeros(vec![channels]))?;
    params.insert(key(prefix, "running_var"), Tensor::full(vec![channels], 1.0))
}

/// Batch norm. In training mode the updated running statistics are queued
/// on the graph under the layer's parameter names.
pub fn batchnorm(g: &mut Graph, params: &ParamSet, prefix: &str, x: Var, train: bool) -> Result<Var> {
    let gamma = g.param(params, &key(prefix, "gamma"))?;
    let beta = g.param(params, &key(prefix, "beta"))?;
    let mean_key = key(prefix, "running_mean");
    let var_key = key(prefix, "running_var");
    let running_mean = params.require(&mean_key)?.values();
    let running_var = params.require(&var_key)?.values();
    let mode = if train {
        BnMode::Train { running_mean, running_var }
    } else {
        BnMode::Infer { running_mean, running_var }
    };
    let (y, stats) = g.batchnorm(x, gamma, beta, mode)?;
    if let Some(s) = stats {
        g.record_state(mean_key, s.mean);
        g.record_state(var_key, s.var);
    }
    Ok(y)
}

/// Input weights `D × 4H`, recurrent weights `H × 4H` (both uniform
/// ±0.08) and a zero bias `4H`. Gate order along the `4H` axis is input,
/// forget, candidate, output.
pub fn add_lstm<R: Rng + ?Sized>(
    params: &mut ParamSet,
    rng: &mut R,
    prefix: &str,
    inputs: usize,
    hidden: usize,
) -> Result<()> {
    params.insert(key(prefix, "wx"), init::uniform(rng, vec![inputs, 4 * hidden], LSTM_INIT).trainable())?;
    params.insert(key(prefix, "wh"), init::uniform(rng, vec![hidden, 4 * hidden], LSTM_INIT).trainable())?;
    params.insert(key(prefix, "b"), Tensor::zeros(vec![4 * hidden]).trainable())
}

/// One direction's LSTM parameters bound into a graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

pub fn lstm_vars(g: &mut Graph, params: &ParamSet, prefix: &str) -> Result<LstmVars> {
    let wx = g.param(params, &key(prefix, "wx"))?;
    let wh = g.param(params, &key(prefix, "wh"))?;
    let b = g.param(params, &key(prefix, "b"))?;
    let four_h = g.shape(b)[0];
    if !four_h.is_multiple_of(4) {
        return Err(Error::Shape(format!("lstm bias of length {four_h}")));
    }
    Ok(LstmVars { wx, wh, b, hidden: four_h / 4 })
}

/// One LSTM cell step on row vectors: `x_t` is `1 × D`, `h` and `c` are
/// `1 × H`. Returns `(h_t, c_t)`.
pub fn lstm_step(g: &mut Graph, x_t: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hd = p.hidden;
    if g.shape(h) != [1, hd] || g.shape(c) != [1, hd] {
        return Err(Error::Shape(format!(
            "lstm state {:?}/{:?} for hidden size {hd}",
            g.shape(h),
            g.shape(c)
        )));
    }
    let zx = g.matmul(x_t, p.wx)?;
    let zh = g.matmul(h, p.wh)?;
    let z = g.add(zx, zh)?;
    let z = g.add_row_bias(z, p.b)?;
    let zi = g.slice(z, 1, 0, hd)?;
    let zf = g.slice(z, 1, hd, hd)?;
    let zg = g.slice(z, 1, 2 * hd, hd)?;
    let zo = g.slice(z, 1, 3 * hd, hd)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_t = g.add(keep, write)?;
    let squashed = g.tanh(c_t);
    let h_t = g.mul(o, squashed)?;
    Ok((h_t, c_t))
}

fn run_direction(g: &mut Graph, xs: Var, p: &LstmVars, order: impl Iterator<Item = usize>, t: usize) -> Result<Vec<Var>> {
    let mut h = g.input(vec![1, p.hidden], vec![0.0; p.hidden])?;
    let mut c = h;
    let mut out = vec![h; t];
    for step in order {
        let x = g.slice(xs, 0, step, 1)?;
        let (nh, nc) = lstm_step(g, x, h, c, p)?;
        out[step] = nh;
        h = nh;
        c = nc;
    }
    Ok(out)
}

/// Runs `fwd` left to right and `bwd` right to left over the rows of the
/// `T × D` input and returns `T × 2H` rows `[h_fwd; h_bwd]`.
pub fn bidirectional(g: &mut Graph, xs: Var, fwd: &LstmVars, bwd: &LstmVars) -> Result<Var> {
    let t = match *g.shape(xs) {
        [t, _] if t >= 1 => t,
        ref s => return Err(Error::Shape(format!("bidirectional input {s:?}"))),
    };
    let hf = run_direction(g, xs, fwd, 0..t, t)?;
    let hb = run_direction(g, xs, bwd, (0..t).rev(), t)?;
    let rows = hf
        .iter()
        .zip(&hb)
        .map(|(&a, &b)| g.concat(&[a, b], 1))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&rows, 0)
}
