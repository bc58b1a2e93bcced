use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::dbn::DbnConfig;
use crate::degrader::QP_MAX;
use crate::detector::{DetectorConfig, RefineConfig};
use crate::frame_io::{parse_key_values, SynthKind, SynthSpec};
use crate::trainer::{LossWeights, Phase, TrainConfig};
use crate::{Error, Result};

/// Every recognised key with its default, in file order. `raw` empty means
/// the degrade stage synthesizes its input from the `synth.*` keys.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "top-level seed; each stage derives its own from it"),
    ("work_dir", "work", "directory receiving every artifact"),
    ("raw", "", "directory of raw frames; empty to synthesize"),
    ("synth.kind", "translate", "translate | noise-pan | checker-drift"),
    ("synth.frames", "24", "synthetic sequence length"),
    ("synth.width", "48", "synthetic frame width"),
    ("synth.height", "48", "synthetic frame height"),
    ("synth.dx", "1", "horizontal motion per frame in pixels"),
    ("synth.dy", "0", "vertical motion per frame in pixels"),
    ("qp.pattern", "10,38,3", "low,high,period QP schedule"),
    ("dbn.hidden", "256", "hidden units per RBM layer"),
    ("dbn.lr", "0.05", "CD-1 and fine-tuning learning rate"),
    ("dbn.pretrain_epochs", "100", "CD-1 epochs per layer"),
    ("dbn.finetune_epochs", "100", "supervised epochs"),
    ("dbn.batch", "4", "mini-batch size"),
    ("dbn.momentum", "0.9", "fine-tuning momentum"),
    ("dbn.use_qp", "true", "include QP as a third feature"),
    ("detector.bins", "64", "embedding bins"),
    ("detector.embed_dim", "16", "embedding width"),
    ("detector.hidden", "32", "LSTM units per direction"),
    ("detector.dense", "32", "dense layer width"),
    ("detector.dropout", "0.4", "dropout rate"),
    ("detector.lr", "0.001", "Adam learning rate"),
    ("detector.epochs", "60", "training epochs"),
    ("detector.window", "16", "training window length"),
    ("refine.threshold", "0.5", "PQF probability threshold"),
    ("refine.d_max", "3", "largest allowed PQF spacing"),
    ("mfcnn.lr", "0.001", "Adam learning rate for both subnets"),
    ("mfcnn.steps", "2000", "training steps"),
    ("mfcnn.window", "50", "convergence window of the motion term"),
    ("mfcnn.tolerance", "0.001", "relative change counted as converged"),
    ("mfcnn.phase1_a", "1", "motion weight before the switch"),
    ("mfcnn.phase1_b", "0.01", "enhancement weight before the switch"),
    ("mfcnn.phase2_a", "0.01", "motion weight after the switch"),
    ("mfcnn.phase2_b", "1", "enhancement weight after the switch"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub work_dir: PathBuf,
    pub raw: Option<PathBuf>,
    pub synth: SynthSpec,
    pub qp_pattern: String,
    pub dbn: DbnConfig,
    pub detector: DetectorConfig,
    pub detector_window: usize,
    pub refine: RefineConfig,
    pub mfcnn: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new()).expect("defaults are valid")
    }
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let default = KEYS.iter().find(|k| k.0 == key).expect("known key").1;
    let raw = map.get(key).map(String::as_str).unwrap_or(default);
    raw.parse()
        .map_err(|_| Error::InvalidArgument(format!("config key `{key}`: cannot parse `{raw}`")))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("config key `{key}` must be positive, got {v}")))
    }
}

fn nonzero(key: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("config key `{key}` must be at least 1")))
    }
}

impl PipelineConfig {
    /// Parses a config file. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    /// Applies `key=value` overrides on top of a config file's text.
    pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = parse_key_values(text)?;
        for (k, v) in overrides {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(bad) = map.keys().find(|k| !KEYS.iter().any(|d| d.0 == k.as_str())) {
            return Err(Error::InvalidArgument(format!("unknown config key `{bad}`")));
        }
        let raw: String = parse(map, "raw")?;
        let synth = SynthSpec {
            kind: parse::<SynthKind>(map, "synth.kind")?,
            frames: parse(map, "synth.frames")?,
            width: parse(map, "synth.width")?,
            height: parse(map, "synth.height")?,
            dx: parse(map, "synth.dx")?,
            dy: parse(map, "synth.dy")?,
            seed: 0,
        };
        let weights = |a: &str, b: &str, phase| -> Result<LossWeights> {
            LossWeights::new(parse(map, a)?, parse(map, b)?, phase)
        };
        let cfg = Self {
            seed: parse(map, "seed")?,
            work_dir: PathBuf::from(parse::<String>(map, "work_dir")?),
            raw: (!raw.is_empty()).then(|| PathBuf::from(raw)),
            synth,
            qp_pattern: parse(map, "qp.pattern")?,
            dbn: DbnConfig {
                hidden: parse(map, "dbn.hidden")?,
                lr: parse(map, "dbn.lr")?,
                pretrain_epochs: parse(map, "dbn.pretrain_epochs")?,
                finetune_epochs: parse(map, "dbn.finetune_epochs")?,
                batch: parse(map, "dbn.batch")?,
                momentum: parse(map, "dbn.momentum")?,
                use_qp: parse(map, "dbn.use_qp")?,
            },
            detector: DetectorConfig {
                bins: parse(map, "detector.bins")?,
                embed_dim: parse(map, "detector.embed_dim")?,
                hidden: parse(map, "detector.hidden")?,
                dense: parse(map, "detector.dense")?,
                dropout: parse(map, "detector.dropout")?,
                lr: parse(map, "detector.lr")?,
                epochs: parse(map, "detector.epochs")?,
            },
            detector_window: parse(map, "detector.window")?,
            refine: RefineConfig {
                threshold: parse(map, "refine.threshold")?,
                d_max: parse(map, "refine.d_max")?,
            },
            mfcnn: TrainConfig {
                lr: parse(map, "mfcnn.lr")?,
                max_steps: parse(map, "mfcnn.steps")?,
                window: parse(map, "mfcnn.window")?,
                tolerance: parse(map, "mfcnn.tolerance")?,
                phase1: weights("mfcnn.phase1_a", "mfcnn.phase1_b", Phase::McDominant)?,
                phase2: weights("mfcnn.phase2_a", "mfcnn.phase2_b", Phase::QeDominant)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rates, sizes and weights must be positive. Epoch and step counts may
    /// be zero, which leaves the corresponding model at its initialisation.
    pub fn validate(&self) -> Result<()> {
        if self.raw.is_none() {
            nonzero("synth.frames", self.synth.frames)?;
            nonzero("synth.width", self.synth.width)?;
            nonzero("synth.height", self.synth.height)?;
        }
        crate::degrader::pattern_schedule(&self.qp_pattern, 1)
            .map_err(|e| Error::InvalidArgument(format!("config key `qp.pattern`: {e}")))?;
        let qp_ok = self
            .qp_pattern
            .split(',')
            .take(2)
            .all(|v| v.trim().parse::<u8>().is_ok_and(|q| q <= QP_MAX));
        if !qp_ok {
            return Err(Error::InvalidArgument(format!("config key `qp.pattern`: QP above {QP_MAX}")));
        }
        nonzero("dbn.hidden", self.dbn.hidden)?;
        positive("dbn.lr", self.dbn.lr)?;
        nonzero("dbn.batch", self.dbn.batch)?;
        if !(0.0..1.0).contains(&self.dbn.momentum) {
            return Err(Error::InvalidArgument("config key `dbn.momentum` must lie in [0, 1)".into()));
        }
        nonzero("detector.bins", self.detector.bins)?;
        nonzero("detector.embed_dim", self.detector.embed_dim)?;
        nonzero("detector.hidden", self.detector.hidden)?;
        nonzero("detector.dense", self.detector.dense)?;
        if !(0.0..1.0).contains(&self.detector.dropout) {
            return Err(Error::InvalidArgument("config key `detector.dropout` must lie in [0, 1)".into()));
        }
        positive("detector.lr", self.detector.lr)?;
        nonzero("detector.window", self.detector_window)?;
        if !(self.refine.threshold > 0.0 && self.refine.threshold < 1.0) {
            return Err(Error::InvalidArgument("config key `refine.threshold` must lie in (0, 1)".into()));
        }
        if self.refine.d_max < 2 {
            return Err(Error::InvalidArgument("config key `refine.d_max` must be at least 2".into()));
        }
        positive("mfcnn.lr", self.mfcnn.lr)?;
        nonzero("mfcnn.window", self.mfcnn.window)?;
        positive("mfcnn.tolerance", self.mfcnn.tolerance)?;
        Ok(())
    }

    /// The full config as `key = value` text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let d = &self.dbn;
        let t = &self.detector;
        let m = &self.mfcnn;
        let values: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("work_dir", self.work_dir.display().to_string()),
            ("raw", self.raw.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("synth.kind", s.kind.to_string()),
            ("synth.frames", s.frames.to_string()),
            ("synth.width", s.width.to_string()),
            ("synth.height", s.height.to_string()),
            ("synth.dx", s.dx.to_string()),
            ("synth.dy", s.dy.to_string()),
            ("qp.pattern", self.qp_pattern.clone()),
            ("dbn.hidden", d.hidden.to_string()),
            ("dbn.lr", d.lr.to_string()),
            ("dbn.pretrain_epochs", d.pretrain_epochs.to_string()),
            ("dbn.finetune_epochs", d.finetune_epochs.to_string()),
            ("dbn.batch", d.batch.to_string()),
            ("dbn.momentum", d.momentum.to_string()),
            ("dbn.use_qp", d.use_qp.to_string()),
            ("detector.bins", t.bins.to_string()),
            ("detector.embed_dim", t.embed_dim.to_string()),
            ("detector.hidden", t.hidden.to_string()),
            ("detector.dense", t.dense.to_string()),
            ("detector.dropout", t.dropout.to_string()),
            ("detector.lr", t.lr.to_string()),
            ("detector.epochs", t.epochs.to_string()),
            ("detector.window", self.detector_window.to_string()),
            ("refine.threshold", self.refine.threshold.to_string()),
            ("refine.d_max", self.refine.d_max.to_string()),
            ("mfcnn.lr", m.lr.to_string()),
            ("mfcnn.steps", m.max_steps.to_string()),
            ("mfcnn.window", m.window.to_string()),
            ("mfcnn.tolerance", m.tolerance.to_string()),
            ("mfcnn.phase1_a", m.phase1.a.to_string()),
            ("mfcnn.phase1_b", m.phase1.b.to_string()),
            ("mfcnn.phase2_a", m.phase2.a.to_string()),
            ("mfcnn.phase2_b", m.phase2.b.to_string()),
        ];
        values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Per-stage seed: FNV-1a (64-bit) of the text `"{seed}/{stage}"`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in format!("{seed}/{stage}").bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
