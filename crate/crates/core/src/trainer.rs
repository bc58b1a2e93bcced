//! Training samples, the joint MC/QE loss, and the two-phase schedule.

use std::fmt;

use crate::frame_io::{LumaFrame, Sequence};
use crate::mc::{self, frame_tensor, McSubnet};
use crate::qe::{self, QeSubnet};
use crate::tensor::{Adam, Graph, Tensor, Var};
use crate::{Error, Result};

/// One non-PQF with its nearest PQF on each side, raw and compressed.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub np_index: usize,
    pub p1_index: usize,
    pub p2_index: usize,
    pub f_np: Tensor,
    pub f_np_raw: Tensor,
    pub f_p1: Tensor,
    pub f_p1_raw: Tensor,
    pub f_p2: Tensor,
    pub f_p2_raw: Tensor,
}

/// Nearest PQF strictly before and strictly after `t`; a missing side
/// takes the other side's frame.
pub fn neighbour_pqfs(labels: &[bool], t: usize) -> Option<(usize, usize)> {
    let before = (0..t).rev().find(|&i| labels[i]);
    let after = (t + 1..labels.len()).find(|&i| labels[i]);
    match (before, after) {
        (Some(a), Some(b)) => Some((a, b)),
        (Some(a), None) => Some((a, a)),
        (None, Some(b)) => Some((b, b)),
        (None, None) => None,
    }
}

/// One sample per non-PQF, in frame order.
pub fn make_samples(compressed: &Sequence, raw: &Sequence, labels: &[bool]) -> Result<Vec<TrainingSample>> {
    if compressed.len() != raw.len() {
        return Err(Error::LengthMismatch {
            what: "compressed vs raw frames",
            left: compressed.len(),
            right: raw.len(),
        });
    }
    if compressed.dims() != raw.dims() {
        return Err(Error::InconsistentDimensions {
            expected: raw.dims(),
            found: compressed.dims(),
        });
    }
    if labels.len() != compressed.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs frames",
            left: labels.len(),
            right: compressed.len(),
        });
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::InvalidArgument("labels contain no PQF".into()));
    }
    let (c, r) = (compressed.frames(), raw.frames());
    let mut out = Vec::new();
    for t in (0..labels.len()).filter(|&t| !labels[t]) {
        let (p1, p2) = neighbour_pqfs(labels, t).expect("at least one PQF");
        out.push(TrainingSample {
            np_index: t,
            p1_index: p1,
            p2_index: p2,
            f_np: frame_tensor(&c[t]),
            f_np_raw: frame_tensor(&r[t]),
            f_p1: frame_tensor(&c[p1]),
            f_p1_raw: frame_tensor(&r[p1]),
            f_p2: frame_tensor(&c[p2]),
            f_p2_raw: frame_tensor(&r[p2]),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    McDominant,
    QeDominant,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::McDominant => 1,
            Phase::QeDominant => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Weights `a` (motion term) and `b` (enhancement term) of the joint loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub a: f64,
    pub b: f64,
    pub phase: Phase,
}

impl LossWeights {
    pub fn new(a: f64, b: f64, phase: Phase) -> Result<Self> {
        let ok = a > 0.0
            && b > 0.0
            && a.is_finite()
            && b.is_finite()
            && match phase {
                Phase::McDominant => a / b >= 10.0,
                Phase::QeDominant => b / a >= 10.0,
            };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "weights a={a}, b={b} do not fit phase {phase}"
            )));
        }
        Ok(Self { a, b, phase })
    }

    pub fn mc_dominant() -> Self {
        Self {
            a: 1.0,
            b: 0.01,
            phase: Phase::McDominant,
        }
    }

    pub fn qe_dominant() -> Self {
        Self {
            a: 0.01,
            b: 1.0,
            phase: Phase::QeDominant,
        }
    }
}

/// Graph handles of the joint loss and its two unweighted terms.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub mc: Var,
    pub qe: Var,
}

/// Builds `a·Σᵢ mse(warp(raw PQFᵢ, mᵢ), raw non-PQF) + b·mse(enhanced, raw
/// non-PQF)` where `mᵢ` is estimated between the compressed frames and the
/// enhancement sees the compressed PQFs warped by the same motion.
pub fn loss_mf(
    g: &mut Graph,
    mc_net: &McSubnet,
    qe_net: &QeSubnet,
    s: &TrainingSample,
    w: &LossWeights,
    train: bool,
) -> Result<LossParts> {
    let f_np = g.constant(s.f_np.clone());
    let f_np_raw = g.constant(s.f_np_raw.clone());
    let mut mc_terms = Vec::with_capacity(2);
    let mut compensated = Vec::with_capacity(2);
    for (p, p_raw) in [(&s.f_p1, &s.f_p1_raw), (&s.f_p2, &s.f_p2_raw)] {
        let p = g.constant(p.clone());
        let p_raw = g.constant(p_raw.clone());
        let m = mc::estimate_motion(g, mc_net.params(), mc_net.config(), p, f_np)?;
        let warped_raw = mc::warp(g, p_raw, m)?;
        mc_terms.push(g.mse(warped_raw, f_np_raw)?);
        compensated.push(mc::warp(g, p, m)?);
    }
    let mc_term = g.add(mc_terms[0], mc_terms[1])?;
    let (enhanced, _) = qe::enhance(
        g,
        qe_net.params(),
        qe_net.config(),
        f_np,
        compensated[0],
        compensated[1],
        train,
    )?;
    let qe_term = g.mse(enhanced, f_np_raw)?;
    let a = g.scale(mc_term, w.a);
    let b = g.scale(qe_term, w.b);
    let total = g.add(a, b)?;
    Ok(LossParts {
        total,
        mc: mc_term,
        qe: qe_term,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_steps: usize,
    /// Moving-average window of the convergence test.
    pub window: usize,
    /// Relative change of the moving average below which the motion term
    /// counts as converged.
    pub tolerance: f64,
    pub phase1: LossWeights,
    pub phase2: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            max_steps: 2000,
            window: 50,
            tolerance: 1e-3,
            phase1: LossWeights::mc_dominant(),
            phase2: LossWeights::qe_dominant(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: Phase,
    pub mc_term: f64,
    pub qe_term: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    /// First step trained with the second-phase weights.
    pub switch_step: Option<usize>,
}

pub const TRAIN_LOG_HEADER: &str = "step,phase,mc_term,qe_term,total";

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.phase, r.mc_term, r.qe_term, r.total
            ));
        }
        out
    }
}

/// Whether the moving average of the last `window` values moved by less
/// than `tolerance` relative to the previous window. Needs `window + 1`
/// values; a zero-to-zero move counts as converged.
pub fn converged(history: &[f64], window: usize, tolerance: f64) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    let n = history.len();
    let cur: f64 = history[n - window..].iter().sum::<f64>() / window as f64;
    let prev: f64 = history[n - window - 1..n - 1].iter().sum::<f64>() / window as f64;
    let change = (cur - prev).abs();
    if change == 0.0 {
        return true;
    }
    change / prev.abs().max(f64::MIN_POSITIVE) < tolerance
}

/// Adam on both nets, one sample per step in cycling order. The weights
/// start at `phase1` and switch once to `phase2` after the motion term
/// converges.
pub fn train_mfcnn(
    mc_net: &mut McSubnet,
    qe_net: &mut QeSubnet,
    samples: &[TrainingSample],
    config: &TrainConfig,
) -> Result<TrainingLog> {
    if samples.is_empty() && config.max_steps > 0 {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if !(config.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate {}", config.lr)));
    }
    let mut mc_opt = Adam::new(config.lr);
    let mut qe_opt = Adam::new(config.lr);
    let mut weights = config.phase1;
    let mut log = TrainingLog::default();
    let mut mc_history = Vec::with_capacity(config.max_steps);
    for step in 0..config.max_steps {
        let s = &samples[step % samples.len()];
        let mut g = Graph::new();
        let parts = loss_mf(&mut g, mc_net, qe_net, s, &weights, true)?;
        let (mc_v, qe_v, total) = (g.scalar(parts.mc), g.scalar(parts.qe), g.scalar(parts.total));
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at step {step} (sample frame {}): mc {mc_v}, qe {qe_v}",
                s.np_index
            )));
        }
        let grads = g.backward(parts.total)?;
        mc_net.params_mut().absorb(&g, &grads);
        qe_net.params_mut().absorb(&g, &grads);
        qe_net.params_mut().apply_state(&g.take_state_updates())?;
        mc_opt.step(mc_net.params_mut())?;
        qe_opt.step(qe_net.params_mut())?;
        log.rows.push(LogRow {
            step,
            phase: weights.phase,
            mc_term: mc_v,
            qe_term: qe_v,
            total,
        });
        mc_history.push(mc_v);
        if log.switch_step.is_none() && converged(&mc_history, config.window, config.tolerance) {
            weights = config.phase2;
            log.switch_step = Some(step + 1);
        }
    }
    Ok(log)
}

/// Replaces every non-PQF by its enhanced version; PQFs pass through.
pub fn enhance_sequence(
    mc_net: &McSubnet,
    qe_net: &QeSubnet,
    compressed: &Sequence,
    labels: &[bool],
) -> Result<Sequence> {
    if labels.len() != compressed.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs frames",
            left: labels.len(),
            right: compressed.len(),
        });
    }
    let frames = compressed.frames();
    let (w, h) = compressed.dims();
    let mut out = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        if labels[t] {
            out.push(frame.clone());
            continue;
        }
        let Some((p1, p2)) = neighbour_pqfs(labels, t) else {
            out.push(frame.clone());
            continue;
        };
        let mut g = Graph::new();
        let f_np = g.constant(frame_tensor(frame));
        let mut compensated = Vec::with_capacity(2);
        for p in [p1, p2] {
            let fp = g.constant(frame_tensor(&frames[p]));
            let m = mc::estimate_motion(&mut g, mc_net.params(), mc_net.config(), fp, f_np)?;
            compensated.push(mc::warp(&mut g, fp, m)?);
        }
        let (en, _) = qe::enhance(
            &mut g,
            qe_net.params(),
            qe_net.config(),
            f_np,
            compensated[0],
            compensated[1],
            false,
        )?;
        out.push(LumaFrame::from_unit(w, h, g.value(en))?);
    }
    Sequence::new(compressed.name(), out)
}
