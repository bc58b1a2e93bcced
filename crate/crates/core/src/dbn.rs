//! Two stacked RBMs with a softmax head, squeezing each frame's quality
//! features into the probability of the PQF class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::QualityRecord;
use crate::tensor::{init, Graph, Momentum, ParamSet, Tensor, Var};
use crate::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major matrix of feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!("{rows}x{cols} matrix from {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Per-feature min/max captured from training data.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureNorm {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureNorm {
    /// Min-max scaling; a zero-range feature maps to 0.5.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 })
            .collect()
    }
}

fn raw_features(r: &QualityRecord, use_qp: bool) -> Vec<f64> {
    let mut v = vec![r.psnr, r.ssim];
    if use_qp {
        v.push(f64::from(r.qp));
    }
    v
}

/// Scales (psnr, ssim[, qp]) to `[0, 1]` per feature over `records`.
pub fn normalize_features(records: &[QualityRecord], use_qp: bool) -> Result<(Matrix, FeatureNorm)> {
    if records.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature normalization needs at least 2 records, got {}",
            records.len()
        )));
    }
    let cols = if use_qp { 3 } else { 2 };
    let mut norm = FeatureNorm {
        min: vec![f64::INFINITY; cols],
        max: vec![f64::NEG_INFINITY; cols],
    };
    for r in records {
        for (j, v) in raw_features(r, use_qp).into_iter().enumerate() {
            norm.min[j] = norm.min[j].min(v);
            norm.max[j] = norm.max[j].max(v);
        }
    }
    let data = records
        .iter()
        .flat_map(|r| norm.apply(&raw_features(r, use_qp)))
        .collect();
    Ok((Matrix::new(records.len(), cols, data)?, norm))
}

/// Bernoulli RBM with weights stored `visible × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmLayer {
    pub visible: usize,
    pub hidden: usize,
    pub w: Vec<f64>,
    pub b_vis: Vec<f64>,
    pub b_hid: Vec<f64>,
}

impl RbmLayer {
    pub fn zeros(visible: usize, hidden: usize) -> Self {
        Self {
            visible,
            hidden,
            w: vec![0.0; visible * hidden],
            b_vis: vec![0.0; visible],
            b_hid: vec![0.0; hidden],
        }
    }

    /// Weights N(0, 0.01²), zero biases.
    pub fn random<R: Rng + ?Sized>(visible: usize, hidden: usize, rng: &mut R) -> Self {
        let mut l = Self::zeros(visible, hidden);
        l.w = init::normal(rng, vec![visible * hidden], 0.01).into_values();
        l
    }

    /// `σ(vW + b_hid)`.
    pub fn hidden_probs(&self, v: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let z = (0..self.visible).map(|i| v[i] * self.w[i * self.hidden + j]).sum::<f64>();
                sigmoid(z + self.b_hid[j])
            })
            .collect()
    }

    /// `σ(hWᵀ + b_vis)`.
    pub fn visible_probs(&self, h: &[f64]) -> Vec<f64> {
        (0..self.visible)
            .map(|i| {
                let row = &self.w[i * self.hidden..(i + 1) * self.hidden];
                sigmoid(row.iter().zip(h).map(|(w, h)| w * h).sum::<f64>() + self.b_vis[i])
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.b_vis).chain(&self.b_hid).all(|v| v.is_finite())
    }
}

/// One CD-1 update from visible rows `batch` and the matching sampled
/// hidden states `h_plus`.
pub fn cd1_step_with_hidden(layer: &mut RbmLayer, batch: &[&[f64]], h_plus: &[Vec<f64>], lr: f64) -> Result<()> {
    if batch.is_empty() || batch.len() != h_plus.len() {
        return Err(Error::LengthMismatch {
            what: "visible rows vs hidden samples",
            left: batch.len(),
            right: h_plus.len(),
        });
    }
    let (nv, nh) = (layer.visible, layer.hidden);
    let mut dw = vec![0.0; nv * nh];
    let mut dv = vec![0.0; nv];
    let mut dh = vec![0.0; nh];
    for (v, hp) in batch.iter().zip(h_plus) {
        if v.len() != nv || hp.len() != nh {
            return Err(Error::Shape(format!(
                "rbm {nv}x{nh} given rows of {} and {}",
                v.len(),
                hp.len()
            )));
        }
        let v_neg = layer.visible_probs(hp);
        let h_neg = layer.hidden_probs(&v_neg);
        for i in 0..nv {
            for j in 0..nh {
                dw[i * nh + j] += v[i] * hp[j] - v_neg[i] * h_neg[j];
            }
            dv[i] += v[i] - v_neg[i];
        }
        for j in 0..nh {
            dh[j] += hp[j] - h_neg[j];
        }
    }
    let k = lr / batch.len() as f64;
    layer.w.iter_mut().zip(&dw).for_each(|(w, d)| *w += k * d);
    layer.b_vis.iter_mut().zip(&dv).for_each(|(b, d)| *b += k * d);
    layer.b_hid.iter_mut().zip(&dh).for_each(|(b, d)| *b += k * d);
    Ok(())
}

/// Samples `h⁺ ~ Bernoulli(σ(vW + b_hid))` for each row and applies CD-1.
pub fn cd1_step<R: Rng + ?Sized>(layer: &mut RbmLayer, batch: &[&[f64]], lr: f64, rng: &mut R) -> Result<()> {
    let h_plus: Vec<Vec<f64>> = batch
        .iter()
        .map(|v| {
            if v.len() != layer.visible {
                return Vec::new();
            }
            layer
                .hidden_probs(v)
                .into_iter()
                .map(|p| if rng.gen::<f64>() < p { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    cd1_step_with_hidden(layer, batch, &h_plus, lr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbmTraining {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

/// CD-1 over shuffled mini-batches.
pub fn train_rbm(layer: &mut RbmLayer, data: &Matrix, cfg: &RbmTraining) -> Result<()> {
    if data.cols != layer.visible {
        return Err(Error::Shape(format!(
            "{} data columns for {} visible units",
            data.cols, layer.visible
        )));
    }
    if !(cfg.lr > 0.0) || cfg.batch == 0 {
        return Err(Error::InvalidArgument(format!(
            "rbm learning rate {} / batch {}",
            cfg.lr, cfg.batch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.rows).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data.row(i)).collect();
            cd1_step(layer, &rows, cfg.lr, &mut rng)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbnConfig {
    pub hidden: usize,
    pub lr: f64,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub batch: usize,
    /// Momentum of the supervised fine-tuning updates.
    pub momentum: f64,
    pub use_qp: bool,
}

impl Default for DbnConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            lr: 0.05,
            pretrain_epochs: 100,
            finetune_epochs: 100,
            batch: 4,
            momentum: 0.9,
            use_qp: true,
        }
    }
}

impl DbnConfig {
    pub fn visible(&self) -> usize {
        if self.use_qp {
            3
        } else {
            2
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dbn {
    pub layers: [RbmLayer; 2],
    /// Softmax head weights `hidden × 2` and bias; class 1 is PQF.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub norm: Option<FeatureNorm>,
    pub use_qp: bool,
}

impl Dbn {
    pub fn new(cfg: &DbnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l1 = RbmLayer::random(cfg.visible(), cfg.hidden, &mut rng);
        let l2 = RbmLayer::random(cfg.hidden, cfg.hidden, &mut rng);
        let head = init::he_uniform(&mut rng, vec![cfg.hidden, 2], cfg.hidden).into_values();
        Self {
            layers: [l1, l2],
            head_w: head,
            head_b: vec![0.0; 2],
            norm: None,
            use_qp: cfg.use_qp,
        }
    }

    pub fn zeros(cfg: &DbnConfig) -> Self {
        Self {
            layers: [
                RbmLayer::zeros(cfg.visible(), cfg.hidden),
                RbmLayer::zeros(cfg.hidden, cfg.hidden),
            ],
            head_w: vec![0.0; cfg.hidden * 2],
            head_b: vec![0.0; 2],
            norm: None,
            use_qp: cfg.use_qp,
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    /// Mean-field pass through both RBMs and the head: `P(PQF)` per row.
    fn class_probs(&self, x: &[f64]) -> f64 {
        let h1 = self.layers[0].hidden_probs(x);
        let h2 = self.layers[1].hidden_probs(&h1);
        let n = self.hidden();
        let z: Vec<f64> = (0..2)
            .map(|c| (0..n).map(|j| h2[j] * self.head_w[j * 2 + c]).sum::<f64>() + self.head_b[c])
            .collect();
        sigmoid(z[1] - z[0])
    }

    /// Fine-tuning parameters as a named set.
    pub fn to_params(&self) -> Result<ParamSet> {
        let mut p = ParamSet::new(0);
        for (k, l) in self.layers.iter().enumerate() {
            p.insert(format!("dbn.l{k}.w"), Tensor::new(vec![l.visible, l.hidden], l.w.clone())?.trainable())?;
            p.insert(format!("dbn.l{k}.b_hid"), Tensor::new(vec![l.hidden], l.b_hid.clone())?.trainable())?;
            p.insert(format!("dbn.l{k}.b_vis"), Tensor::new(vec![l.visible], l.b_vis.clone())?)?;
        }
        p.insert("dbn.head.w", Tensor::new(vec![self.hidden(), 2], self.head_w.clone())?.trainable())?;
        p.insert("dbn.head.b", Tensor::new(vec![2], self.head_b.clone())?.trainable())?;
        if let Some(n) = &self.norm {
            p.insert("dbn.norm.min", Tensor::new(vec![n.min.len()], n.min.clone())?)?;
            p.insert("dbn.norm.max", Tensor::new(vec![n.max.len()], n.max.clone())?)?;
        }
        Ok(p)
    }

    pub fn from_params(p: &ParamSet) -> Result<Self> {
        let get = |name: &str| -> Result<&Tensor> {
            p.get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
        };
        let mut layers = Vec::with_capacity(2);
        for k in 0..2 {
            let w = get(&format!("dbn.l{k}.w"))?;
            let [visible, hidden] = *w.shape() else {
                return Err(Error::Shape(format!("dbn.l{k}.w is {:?}", w.shape())));
            };
            let b_hid = get(&format!("dbn.l{k}.b_hid"))?.values().to_vec();
            let b_vis = get(&format!("dbn.l{k}.b_vis"))?.values().to_vec();
            if b_hid.len() != hidden || b_vis.len() != visible {
                return Err(Error::Shape(format!("dbn.l{k} biases do not match {visible}x{hidden}")));
            }
            layers.push(RbmLayer {
                visible,
                hidden,
                w: w.values().to_vec(),
                b_vis,
                b_hid,
            });
        }
        let l2 = layers.pop().expect("two layers");
        let l1 = layers.pop().expect("two layers");
        if !(l1.visible == 2 || l1.visible == 3) || l2.visible != l1.hidden {
            return Err(Error::Shape(format!(
                "dbn layers {}x{} then {}x{}",
                l1.visible, l1.hidden, l2.visible, l2.hidden
            )));
        }
        let head_w = get("dbn.head.w")?;
        let head_b = get("dbn.head.b")?;
        if head_w.shape() != [l2.hidden, 2] || head_b.shape() != [2] {
            return Err(Error::Shape("dbn head does not match the top layer".into()));
        }
        let norm = match (p.get("dbn.norm.min"), p.get("dbn.norm.max")) {
            (Some(lo), Some(hi)) if lo.len() == l1.visible && hi.len() == l1.visible => Some(FeatureNorm {
                min: lo.values().to_vec(),
                max: hi.values().to_vec(),
            }),
            (None, None) => None,
            _ => return Err(Error::Shape("dbn feature normalization is malformed".into())),
        };
        Ok(Self {
            use_qp: l1.visible == 3,
            head_w: head_w.values().to_vec(),
            head_b: head_b.values().to_vec(),
            layers: [l1, l2],
            norm,
        })
    }
}

/// Logits `N × 2` of the mean-field stack for the rows bound in `x`.
pub fn forward_logits(g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
    let mut h = x;
    for k in 0..2 {
        let w = g.param(params, &format!("dbn.l{k}.w"))?;
        let b = g.param(params, &format!("dbn.l{k}.b_hid"))?;
        let z = g.dense(h, w, b)?;
        h = g.sigmoid(z);
    }
    let w = g.param(params, "dbn.head.w")?;
    let b = g.param(params, "dbn.head.b")?;
    g.dense(h, w, b)
}

/// Captures the normalization, then trains layer 1 on the features and
/// layer 2 on layer-1 hidden probabilities.
pub fn pretrain(dbn: &mut Dbn, records: &[QualityRecord], cfg: &DbnConfig, seed: u64) -> Result<Matrix> {
    let (x, norm) = normalize_features(records, dbn.use_qp)?;
    dbn.norm = Some(norm);
    let rbm = |s: u64| RbmTraining {
        lr: cfg.lr,
        epochs: cfg.pretrain_epochs,
        batch: cfg.batch,
        seed: s,
    };
    train_rbm(&mut dbn.layers[0], &x, &rbm(seed))?;
    let h1: Vec<f64> = (0..x.rows).flat_map(|i| dbn.layers[0].hidden_probs(x.row(i))).collect();
    let h1 = Matrix::new(x.rows, dbn.hidden(), h1)?;
    train_rbm(&mut dbn.layers[1], &h1, &rbm(seed.wrapping_add(1)))?;
    Ok(x)
}

/// Supervised cross-entropy training of the whole stack with mini-batch
/// gradient descent. Returns the mean loss of each epoch.
pub fn finetune(dbn: &mut Dbn, features: &Matrix, labels: &[bool], cfg: &DbnConfig, seed: u64) -> Result<Vec<f64>> {
    if features.rows != labels.len() {
        return Err(Error::LengthMismatch {
            what: "feature rows vs labels",
            left: features.rows,
            right: labels.len(),
        });
    }
    if features.rows == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("finetune needs rows, a batch size and a positive rate".into()));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidArgument(format!("momentum {} outside [0, 1)", cfg.momentum)));
    }
    let mut params = dbn.to_params()?;
    let mut opt = Momentum::new(cfg.lr, cfg.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..features.rows).collect();
    let mut losses = Vec::with_capacity(cfg.finetune_epochs);
    for _ in 0..cfg.finetune_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let rows: Vec<f64> = chunk.iter().flat_map(|&i| features.row(i).to_vec()).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| usize::from(labels[i])).collect();
            let mut g = Graph::new();
            let x = g.input(vec![chunk.len(), features.cols], rows)?;
            let logits = forward_logits(&mut g, &params, x)?;
            let loss = g.softmax_cross_entropy(logits, &y)?;
            total += g.scalar(loss) * chunk.len() as f64;
            let grads = g.backward(loss)?;
            params.absorb(&g, &grads);
            opt.step(&mut params)?;
        }
        losses.push(total / features.rows as f64);
    }
    let norm = dbn.norm.clone();
    *dbn = Dbn::from_params(&params)?;
    dbn.norm = norm;
    Ok(losses)
}

/// `P(PQF)` for each record, using the frozen training normalization.
pub fn quantize(dbn: &Dbn, records: &[QualityRecord]) -> Result<Vec<f64>> {
    let norm = dbn.norm.as_ref().ok_or(Error::Untrained("dbn has no feature normalization"))?;
    Ok(records
        .iter()
        .map(|r| dbn.class_probs(&norm.apply(&raw_features(r, dbn.use_qp))))
        .collect())
}

/// Predicted class per row (probability of PQF ≥ 0.5).
pub fn classify(dbn: &Dbn, features: &Matrix) -> Vec<bool> {
    (0..features.rows).map(|i| dbn.class_probs(features.row(i)) >= 0.5).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cd1_trace() {
        let mut l = RbmLayer::zeros(1, 1);
        assert_eq!(l.hidden_probs(&[0.7]), vec![0.5]);
        cd1_step_with_hidden(&mut l, &[&[1.0]], &[vec![1.0]], 0.05).unwrap();
        assert!((l.w[0] - 0.0375).abs() < 1e-15);
    }

    #[test]
    fn zero_visible_data_pushes_visible_bias_down() {
        let mut l = RbmLayer::zeros(3, 4);
        let data = Matrix::new(6, 3, vec![0.0; 18]).unwrap();
        let mut prev = l.b_vis.clone();
        for e in 0..20 {
            let cfg = RbmTraining {
                lr: 0.05,
                epochs: 1,
                batch: 2,
                seed: e,
            };
            train_rbm(&mut l, &data, &cfg).unwrap();
            assert!(l.b_vis.iter().zip(&prev).all(|(b, p)| b < p));
            prev = l.b_vis.clone();
        }
    }

    #[test]
    fn normalization() {
        let recs: Vec<QualityRecord> = [20.0, 30.0, 40.0]
            .iter()
            .enumerate()
            .map(|(i, &p)| QualityRecord {
                frame_index: i,
                psnr: p,
                ssim: 0.9,
                qp: 30,
                is_pqf: false,
            })
            .collect();
        let (x, _) = normalize_features(&recs, true).unwrap();
        assert_eq!(x.data, vec![0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5]);
        assert!(normalize_features(&recs[..1], true).is_err());
    }
}
