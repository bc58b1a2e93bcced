//! Finite-difference cases for every differentiable building block and the
//! two training losses. Each case builds its parameters from a seed and
//! projects the output onto a fixed random tensor so every output entry
//! contributes to the checked scalar.

#![allow(dead_code)]

use mfqe_core::degrader::{degrade, pattern_schedule};
use mfqe_core::frame_io::{synthesize_sequence, SynthSpec};
use mfqe_core::mc::{self, frame_tensor, McConfig, McSubnet};
use mfqe_core::qe::{QeConfig, QeSubnet};
use mfqe_core::tensor::{
    grad_check, nn, BnMode, GradCheckOptions, GradCheckReport, Graph, Padding, ParamSet, Tensor, Var,
};
use mfqe_core::trainer::{loss_mf, make_samples, LossWeights, Phase};
use mfqe_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Case = (&'static str, fn(u64) -> Result<GradCheckReport>);

pub const OPS: &[Case] = &[
    ("conv2d", conv2d),
    ("prelu", prelu),
    ("batchnorm", batchnorm),
    ("bilinear_sample", bilinear_sample),
    ("lstm_step", lstm_step),
    ("bidirectional", bidirectional),
    ("dense", dense),
    ("softmax", softmax),
    ("sigmoid", sigmoid),
    ("mse", mse),
];

pub const LOSSES: &[Case] = &[("loss_mc", loss_mc_16), ("loss_mf", loss_mf_16)];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

fn add(p: &mut ParamSet, r: &mut ChaCha8Rng, name: &str, shape: Vec<usize>) {
    p.insert(name, rand_tensor(r, shape, -1.0, 1.0).trainable()).unwrap();
}

// Σ y ⊙ proj with a fixed random `proj` of y's shape.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let proj = g.constant(rand_tensor(&mut rng(seed ^ 0x5eed), shape, -1.0, 1.0));
    let z = g.mul(y, proj)?;
    Ok(g.sum(z))
}

fn check<F>(p: &ParamSet, seed: u64, f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    grad_check(p, &GradCheckOptions { seed, ..Default::default() }, f)
}

fn conv2d(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    add(&mut p, &mut r, "x", vec![2, 3, 7, 6]);
    add(&mut p, &mut r, "w", vec![4, 3, 3, 3]);
    add(&mut p, &mut r, "b", vec![4]);
    let (stride, padding) = if seed.is_multiple_of(2) { (1, Padding::Same) } else { (2, Padding::Valid) };
    check(&p, seed, |g, p| {
        let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
        let y = g.conv2d(x, w, Some(b), stride, padding)?;
        project(g, y, seed)
    })
}

fn prelu(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    add(&mut p, &mut r, "x", vec![2, 3, 4, 4]);
    add(&mut p, &mut r, "alpha", vec![3]);
    check(&p, seed, |g, p| {
        let (x, a) = (g.param(p, "x")?, g.param(p, "alpha")?);
        let y = g.prelu(x, a)?;
        project(g, y, seed)
    })
}

fn batchnorm(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    add(&mut p, &mut r, "x", vec![2, 3, 3, 4]);
    add(&mut p, &mut r, "gamma", vec![3]);
    add(&mut p, &mut r, "beta", vec![3]);
    let (mean, var) = (vec![0.0; 3], vec![1.0; 3]);
    check(&p, seed, |g, p| {
        let (x, gm, bt) = (g.param(p, "x")?, g.param(p, "gamma")?, g.param(p, "beta")?);
        let mode = BnMode::Train { running_mean: &mean, running_var: &var };
        let (y, _) = g.batchnorm(x, gm, bt, mode)?;
        project(g, y, seed)
    })
}

fn bilinear_sample(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    add(&mut p, &mut r, "image", vec![1, 1, 6, 7]);
    // Interior, away from integer grid lines.
    let coords: Vec<f64> = (0..2 * 25)
        .map(|i| {
            let hi = if i < 25 { 5 } else { 4 };
            r.gen_range(0..hi) as f64 + r.gen_range(0.1..0.9)
        })
        .collect();
    p.insert("coords", Tensor::new(vec![1, 2, 5, 5], coords).unwrap().trainable()).unwrap();
    check(&p, seed, |g, p| {
        let (img, c) = (g.param(p, "image")?, g.param(p, "coords")?);
        let y = g.bilinear_sample(img, c)?;
        project(g, y, seed)
    })
}

fn lstm_step(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    nn::add_lstm(&mut p, &mut r, "l", 4, 5)?;
    p.get_mut("l.b").unwrap().values_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
    add(&mut p, &mut r, "xs", vec![3, 4]);
    add(&mut p, &mut r, "h0", vec![1, 5]);
    add(&mut p, &mut r, "c0", vec![1, 5]);
    check(&p, seed, |g, p| {
        let lv = nn::lstm_vars(g, p, "l")?;
        let xs = g.param(p, "xs")?;
        let (mut h, mut c) = (g.param(p, "h0")?, g.param(p, "c0")?);
        for t in 0..3 {
            let x = g.slice(xs, 0, t, 1)?;
            (h, c) = nn::lstm_step(g, x, h, c, &lv)?;
        }
        let both = g.concat(&[h, c], 1)?;
        project(g, both, seed)
    })
}

fn bidirectional(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    nn::add_lstm(&mut p, &mut r, "f", 3, 4)?;
    nn::add_lstm(&mut p, &mut r, "b", 3, 4)?;
    add(&mut p, &mut r, "xs", vec![4, 3]);
    check(&p, seed, |g, p| {
        let (f, b) = (nn::lstm_vars(g, p, "f")?, nn::lstm_vars(g, p, "b")?);
        let xs = g.param(p, "xs")?;
        let y = nn::bidirectional(g, xs, &f, &b)?;
        project(g, y, seed)
    })
}

fn dense(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    add(&mut p, &mut r, "x", vec![3, 5]);
    add(&mut p, &mut r, "w", vec![5, 4]);
    add(&mut p, &mut r, "b", vec![4]);
    check(&p, seed, |g, p| {
        let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
        let y = g.dense(x, w, b)?;
        project(g, y, seed)
    })
}

fn softmax(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    p.insert("x", rand_tensor(&mut r, vec![3, 5], -3.0, 3.0).trainable()).unwrap();
    check(&p, seed, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.softmax(x)?;
        project(g, y, seed)
    })
}

fn sigmoid(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    p.insert("x", rand_tensor(&mut r, vec![3, 5], -4.0, 4.0).trainable()).unwrap();
    check(&p, seed, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.sigmoid(x);
        project(g, y, seed)
    })
}

fn mse(seed: u64) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut p = ParamSet::new(seed);
    add(&mut p, &mut r, "a", vec![2, 7]);
    add(&mut p, &mut r, "b", vec![2, 7]);
    check(&p, seed, |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.mse(a, b)
    })
}

// Untrained nets start at zero motion and zero residual; a small jitter on
// every trainable entry moves them into a generic regime.
fn jitter(p: &mut ParamSet, seed: u64) {
    let mut r = rng(seed ^ 0x7177);
    for (_, t) in p.iter_mut() {
        if t.requires_grad() {
            t.values_mut().iter_mut().for_each(|v| *v += r.gen_range(-0.02..0.02));
        }
    }
}

/// A 16×16 three-frame translation clip, raw and compressed.
pub fn clip16(seed: u64) -> (mfqe_core::frame_io::Sequence, mfqe_core::frame_io::Sequence) {
    let raw = synthesize_sequence(&SynthSpec::translate(3, 16, 16, seed)).unwrap();
    let comp = degrade(&raw, &pattern_schedule("20,36,2", 3).unwrap()).unwrap();
    (raw, comp)
}

fn net_options(seed: u64) -> GradCheckOptions {
    GradCheckOptions { max_total: Some(30), seed, ..Default::default() }
}

fn loss_mc_16(seed: u64) -> Result<GradCheckReport> {
    let cfg = McConfig::default();
    let mut p = McSubnet::new(cfg.clone(), seed)?.params().clone();
    jitter(&mut p, seed);
    let (raw, comp) = clip16(seed);
    let t = |s: &mfqe_core::frame_io::Sequence, i: usize| frame_tensor(&s.frames()[i]);
    let frames = [t(&raw, 0), t(&raw, 1), t(&comp, 0), t(&comp, 1)];
    grad_check(&p, &net_options(seed), |g, p| {
        let [a, b, c, d] = frames.clone().map(|f| g.constant(f));
        mc::loss_mc(g, p, &cfg, a, b, c, d)
    })
}

fn loss_mf_16(seed: u64) -> Result<GradCheckReport> {
    let (mc_cfg, qe_cfg) = (McConfig::default(), QeConfig::default());
    let mut merged = McSubnet::new(mc_cfg.clone(), seed)?.params().clone();
    for (name, t) in QeSubnet::new(qe_cfg.clone(), seed + 1)?.params().iter() {
        merged.insert(name, t.clone())?;
    }
    jitter(&mut merged, seed);
    let (raw, comp) = clip16(seed);
    let sample = make_samples(&comp, &raw, &[true, false, true])?.remove(0);
    let weights = if seed.is_multiple_of(2) {
        LossWeights::mc_dominant()
    } else {
        LossWeights::new(0.05, 1.0, Phase::QeDominant)?
    };
    grad_check(&merged, &net_options(seed), |g, p| {
        let split = |prefix: &str| {
            let mut s = ParamSet::new(seed);
            for (n, t) in p.iter().filter(|(n, _)| n.starts_with(prefix)) {
                s.insert(n, t.clone()).unwrap();
            }
            s
        };
        let mc_net = McSubnet::from_params(mc_cfg.clone(), split("mc."))?;
        let qe_net = QeSubnet::from_params(qe_cfg.clone(), split("qe."))?;
        Ok(loss_mf(g, &mc_net, &qe_net, &sample, &weights, true)?.total)
    })
}
