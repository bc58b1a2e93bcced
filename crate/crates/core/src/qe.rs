//! Quality enhancement: multi-scale feature extraction over the non-PQF and
//! its two compensated PQFs, then a densely connected conv stack that
//! predicts a residual added to the non-PQF.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{nn, Graph, ParamSet, Var};
use crate::{Error, Result};

pub const QE_PREFIX: &str = "qe";

#[derive(Clone, Debug, PartialEq)]
pub struct QeConfig {
    /// Input frames: the non-PQF and the two compensated PQFs.
    pub frames: usize,
    /// Kernel sizes of the parallel extraction branches.
    pub kernels: Vec<usize>,
    /// Maps emitted by each extraction branch.
    pub maps: usize,
    /// Conv + BN + PReLU layers in the mapping stage before the output layer.
    pub dense_layers: usize,
    /// Maps emitted by each of those layers.
    pub dense_filters: usize,
}

impl Default for QeConfig {
    fn default() -> Self {
        Self {
            frames: 3,
            kernels: vec![3, 5, 7],
            maps: 32,
            dense_layers: 4,
            dense_filters: 32,
        }
    }
}

impl QeConfig {
    /// Channels entering the mapping stage.
    pub fn feature_channels(&self) -> usize {
        self.frames * self.kernels.len() * self.maps
    }

    /// Channels entering the output layer.
    pub fn output_inputs(&self) -> usize {
        self.feature_channels() + self.dense_layers * self.dense_filters
    }
}

#[derive(Clone, Debug)]
pub struct QeSubnet {
    config: QeConfig,
    params: ParamSet,
}

fn ext_prefix(frame: usize, k: usize) -> String {
    format!("{QE_PREFIX}.ext.f{frame}.k{k}")
}

fn map_prefix(layer: usize) -> String {
    format!("{QE_PREFIX}.map{layer}")
}

impl QeSubnet {
    /// He-uniform convs, PReLU slopes 0.25, neutral batch norm, and a zero
    /// output layer so the untrained net is the identity on the non-PQF.
    pub fn new(config: QeConfig, seed: u64) -> Result<Self> {
        if config.frames == 0
            || config.kernels.is_empty()
            || config.maps == 0
            || config.dense_filters == 0
            || config.kernels.iter().any(|k| k % 2 == 0)
        {
            return Err(Error::InvalidArgument(format!("unusable enhancement config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new(seed);
        for f in 0..config.frames {
            for &k in &config.kernels {
                let p = ext_prefix(f, k);
                nn::add_conv(&mut params, &mut rng, &p, 1, config.maps, k)?;
                nn::add_prelu(&mut params, &p, config.maps)?;
            }
        }
        let mut channels = config.feature_channels();
        for l in 0..config.dense_layers {
            let p = map_prefix(l);
            nn::add_conv(&mut params, &mut rng, &p, channels, config.dense_filters, 3)?;
            nn::add_batchnorm(&mut params, &p, config.dense_filters)?;
            nn::add_prelu(&mut params, &p, config.dense_filters)?;
            channels += config.dense_filters;
        }
        let out = map_prefix(config.dense_layers);
        nn::add_conv(&mut params, &mut rng, &out, channels, 1, 3)?;
        for leaf in ["w", "b"] {
            let t = params.get_mut(&format!("{out}.{leaf}")).expect("just added");
            t.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(Self { config, params })
    }

    /// Every parameter zero, running statistics included.
    pub fn zeros(config: QeConfig) -> Result<Self> {
        let mut net = Self::new(config, 0)?;
        net.params.zero_values();
        Ok(net)
    }

    pub fn from_params(config: QeConfig, params: ParamSet) -> Result<Self> {
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

    pub fn config(&self) -> &QeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Trainable scalars of the mapping stage.
    pub fn mapping_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, t)| n.starts_with(&format!("{QE_PREFIX}.map")) && t.requires_grad())
            .map(|(_, t)| t.len())
            .sum()
    }
}

/// Runs every frame through every kernel branch and concatenates the maps
/// in frame-major order.
pub fn extract_features(g: &mut Graph, params: &ParamSet, config: &QeConfig, frames: &[Var]) -> Result<Var> {
    if frames.len() != config.frames {
        return Err(Error::LengthMismatch {
            what: "enhancement input frames",
            left: frames.len(),
            right: config.frames,
        });
    }
    let shape = g.shape(frames[0]).to_vec();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 1 {
        return Err(Error::Shape(format!("expected 1x1xHxW frames, got {shape:?}")));
    }
    let mut maps = Vec::with_capacity(config.frames * config.kernels.len());
    for (f, &x) in frames.iter().enumerate() {
        if g.shape(x) != shape.as_slice() {
            return Err(Error::Shape(format!("frame {:?} vs {shape:?}", g.shape(x))));
        }
        for &k in &config.kernels {
            let p = ext_prefix(f, k);
            let y = nn::conv(g, params, &p, x)?;
            maps.push(nn::prelu(g, params, &p, y)?);
        }
    }
    g.concat(&maps, 1)
}

/// Dense mapping from the extracted features to a one-channel residual.
/// `train` selects batch statistics for the normalization layers.
pub fn reconstruct(g: &mut Graph, params: &ParamSet, config: &QeConfig, features: Var, train: bool) -> Result<Var> {
    let c = g.shape(features).get(1).copied().unwrap_or(0);
    if c != config.feature_channels() {
        return Err(Error::Shape(format!(
            "mapping stage expects {} channels, got {c}",
            config.feature_channels()
        )));
    }
    let mut stack = features;
    for l in 0..config.dense_layers {
        let p = map_prefix(l);
        let y = nn::conv(g, params, &p, stack)?;
        let y = nn::batchnorm(g, params, &p, y, train)?;
        let y = nn::prelu(g, params, &p, y)?;
        stack = g.concat(&[stack, y], 1)?;
    }
    nn::conv(g, params, &map_prefix(config.dense_layers), stack)
}

/// `f_np + residual`, together with the residual itself.
pub fn enhance(
    g: &mut Graph,
    params: &ParamSet,
    config: &QeConfig,
    f_np: Var,
    f_p1c: Var,
    f_p2c: Var,
    train: bool,
) -> Result<(Var, Var)> {
    let features = extract_features(g, params, config, &[f_np, f_p1c, f_p2c])?;
    let residual = reconstruct(g, params, config, features, train)?;
    Ok((g.add(f_np, residual)?, residual))
}
