//! PQF detection: a Bi-LSTM over the binned quantized scalar, followed by
//! rule-based refinement of the thresholded labels.

mod csv_io;
mod refine;
mod report;

pub use csv_io::{
    parse_labels_csv, parse_quantized_csv, write_labels_csv, write_quantized_csv, LABELS_HEADER, QUANTIZED_HEADER,
};
pub use refine::{end_gaps_ok, refine, satisfies_spacing, RefineConfig};
pub use report::{detector_report, DetectorScores};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{init, nn, Adam, Graph, ParamSet, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    /// Quantization bins of the embedding table.
    pub bins: usize,
    pub embed_dim: usize,
    /// LSTM units per direction.
    pub hidden: usize,
    pub dense: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            bins: 64,
            embed_dim: 16,
            hidden: 32,
            dense: 32,
            dropout: 0.4,
            lr: 1e-3,
            epochs: 60,
        }
    }
}

/// Bin of `q ∈ [0, 1]`: `floor(q·K)` clamped to `[0, K − 1]`.
pub fn bin_index(q: f64, bins: usize) -> usize {
    let b = (q * bins as f64).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

#[derive(Clone, Debug)]
pub struct DetectorNet {
    config: DetectorConfig,
    params: ParamSet,
}

const EMBED: &str = "det.embed.table";

impl DetectorNet {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        if config.bins < 2 || config.embed_dim == 0 || config.hidden == 0 || config.dense == 0 {
            return Err(Error::InvalidArgument(format!("unusable detector config {config:?}")));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::InvalidArgument(format!("dropout rate {}", config.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new(seed);
        params.insert(
            EMBED,
            init::uniform(&mut rng, vec![config.bins, config.embed_dim], nn::LSTM_INIT).trainable(),
        )?;
        nn::add_lstm(&mut params, &mut rng, "det.fwd", config.embed_dim, config.hidden)?;
        nn::add_lstm(&mut params, &mut rng, "det.bwd", config.embed_dim, config.hidden)?;
        nn::add_dense(&mut params, &mut rng, "det.dense1", 2 * config.hidden, config.dense)?;
        nn::add_dense(&mut params, &mut rng, "det.out", config.dense, 1)?;
        Ok(Self { config, params })
    }

    pub fn zeros(config: DetectorConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.zero_values();
        Ok(net)
    }

    pub fn from_params(config: DetectorConfig, params: ParamSet) -> Result<Self> {
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

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// The same net with the two LSTM directions exchanged and the first
    /// dense layer's input halves swapped to match. Running it on a
    /// reversed sequence reverses the output.
    pub fn mirrored(&self) -> Result<Self> {
        let mut p = self.params.clone();
        for leaf in ["wx", "wh", "b"] {
            let f = self.params.require(&format!("det.fwd.{leaf}"))?.clone();
            let b = self.params.require(&format!("det.bwd.{leaf}"))?.clone();
            *p.get_mut(&format!("det.fwd.{leaf}")).expect("present") = b;
            *p.get_mut(&format!("det.bwd.{leaf}")).expect("present") = f;
        }
        let h = self.config.hidden;
        let cols = self.config.dense;
        let w = p.get_mut("det.dense1.w").expect("present");
        let old = w.values().to_vec();
        let vals = w.values_mut();
        for r in 0..2 * h {
            let src = if r < h { r + h } else { r - h };
            vals[r * cols..(r + 1) * cols].copy_from_slice(&old[src * cols..(src + 1) * cols]);
        }
        Ok(Self {
            config: self.config.clone(),
            params: p,
        })
    }
}

fn bins_of(q: &[f64], bins: usize) -> Result<Vec<usize>> {
    if q.is_empty() {
        return Err(Error::InvalidArgument("empty quantized sequence".into()));
    }
    q.iter()
        .map(|&v| {
            if v.is_finite() {
                Ok(bin_index(v, bins))
            } else {
                Err(Error::NonFinite(format!("quantized value {v}")))
            }
        })
        .collect()
}

/// Per-frame logits `T × 1`. Dropout is applied after the Bi-LSTM when a
/// generator is supplied.
pub fn forward(
    g: &mut Graph,
    params: &ParamSet,
    config: &DetectorConfig,
    q: &[f64],
    dropout: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let idx = bins_of(q, config.bins)?;
    let table = g.param(params, EMBED)?;
    let xs = g.gather_rows(table, &idx)?;
    let fwd = nn::lstm_vars(g, params, "det.fwd")?;
    let bwd = nn::lstm_vars(g, params, "det.bwd")?;
    let mut h = nn::bidirectional(g, xs, &fwd, &bwd)?;
    if let Some(rng) = dropout {
        h = g.dropout(h, config.dropout, rng)?;
    }
    let d = nn::dense(g, params, "det.dense1", h)?;
    let d = g.relu(d);
    nn::dense(g, params, "det.out", d)
}

/// Per-frame PQF probabilities with dropout disabled.
pub fn predict(net: &DetectorNet, q: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let z = forward(&mut g, &net.params, &net.config, q, None)?;
    let p = g.sigmoid(z);
    Ok(g.value(p).to_vec())
}

/// Per-frame binary cross-entropy, Adam, one sequence per step in a
/// seeded shuffled order. Returns the mean loss of each epoch.
pub fn train_detector(net: &mut DetectorNet, data: &[(Vec<f64>, Vec<bool>)], seed: u64) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no detector training sequences".into()));
    }
    for (q, l) in data {
        if q.len() != l.len() {
            return Err(Error::LengthMismatch {
                what: "quantized values vs labels",
                left: q.len(),
                right: l.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Adam::new(net.config.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(net.config.epochs);
    for _ in 0..net.config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &k in &order {
            let (q, labels) = &data[k];
            let targets: Vec<f64> = labels.iter().map(|&b| f64::from(u8::from(b))).collect();
            let mut g = Graph::new();
            let z = forward(&mut g, &net.params, &net.config, q, Some(&mut rng))?;
            let loss = g.bce_with_logits(z, &targets)?;
            total += g.scalar(loss);
            let grads = g.backward(loss)?;
            net.params.absorb(&g, &grads);
            opt.step(&mut net.params)?;
        }
        losses.push(total / data.len() as f64);
    }
    Ok(losses)
}
