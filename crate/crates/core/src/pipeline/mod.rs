//! Stage-by-stage driver over a work directory.
//!
//! Every stage reads the artifacts of earlier stages from the work
//! directory and writes its own under fixed names, so stages can be rerun
//! individually. Randomness comes from [`stage_seed`], which derives one
//! seed per stage from the top-level seed.
//!
//! | stage            | reads                                   | writes |
//! |------------------|-----------------------------------------|--------|
//! | `degrade`        | raw input or synthetic spec             | `raw/`, `compressed/`, `qp_schedule.txt` |
//! | `features`       | `raw/`, `compressed/`, `qp_schedule.txt`| `features.csv` |
//! | `train-dbn`      | `features.csv`                          | `dbn.bin`, `dbn.manifest` |
//! | `quantize`       | `dbn.*`, `features.csv`                 | `quantized.csv` |
//! | `train-detector` | `quantized.csv`, `features.csv`         | `detector.bin`, `detector.manifest` |
//! | `detect`         | `detector.*`, `quantized.csv`           | `pqf_labels.csv` |
//! | `train-mfcnn`    | `raw/`, `compressed/`, `pqf_labels.csv` | `mc.*`, `qe.*`, `train_log.csv`, `train_summary.txt` |
//! | `enhance`        | `mc.*`, `qe.*`, `compressed/`, `pqf_labels.csv` | `enhanced/` |
//! | `report`         | `raw/`, `compressed/`, `features.csv`, `pqf_labels.csv`, optional `enhanced/`, `train_summary.txt` | `report.csv`, `report_summary.txt`, `traces/*.csv` |

mod config;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use config::{stage_seed, PipelineConfig, KEYS};
pub use report::{
    aggregate, feature_traces, parse_report_csv, Aggregates, EnhancementReport, ReportRow, REPORT_HEADER,
};

use crate::dbn::{self, Dbn};
use crate::degrader::{degrade, pattern_schedule, QpSchedule};
use crate::detector::{self, DetectorNet};
use crate::frame_io::{
    load_sequence, parse_key_values, save_sequence, save_sequence_with_meta, synthesize_sequence, Sequence,
    SequenceMeta,
};
use crate::mc::{McConfig, McSubnet};
use crate::metrics::{self, QualityRecord};
use crate::qe::{QeConfig, QeSubnet};
use crate::tensor::{load_params, save_params};
use crate::trainer;
use crate::{Error, Result};

pub const RAW_DIR: &str = "raw";
pub const COMPRESSED_DIR: &str = "compressed";
pub const ENHANCED_DIR: &str = "enhanced";
pub const TRACES_DIR: &str = "traces";
pub const QP_FILE: &str = "qp_schedule.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const QUANTIZED_FILE: &str = "quantized.csv";
pub const LABELS_FILE: &str = "pqf_labels.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.txt";
pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_SUMMARY_FILE: &str = "report_summary.txt";
pub const DBN_STEM: &str = "dbn";
pub const DETECTOR_STEM: &str = "detector";
pub const MC_STEM: &str = "mc";
pub const QE_STEM: &str = "qe";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Degrade,
    Features,
    TrainDbn,
    Quantize,
    TrainDetector,
    Detect,
    TrainMfcnn,
    Enhance,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Degrade,
        Stage::Features,
        Stage::TrainDbn,
        Stage::Quantize,
        Stage::TrainDetector,
        Stage::Detect,
        Stage::TrainMfcnn,
        Stage::Enhance,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Degrade => "degrade",
            Stage::Features => "features",
            Stage::TrainDbn => "train-dbn",
            Stage::Quantize => "quantize",
            Stage::TrainDetector => "train-detector",
            Stage::Detect => "detect",
            Stage::TrainMfcnn => "train-mfcnn",
            Stage::Enhance => "enhance",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage `{s}`")))
    }
}

/// Runs one stage, tagging any failure with the stage name.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    let dir = cfg.work_dir.as_path();
    let result = fs::create_dir_all(dir)
        .map_err(|e| Error::io(dir, e))
        .and_then(|_| match stage {
            Stage::Degrade => stage_degrade(cfg, dir),
            Stage::Features => stage_features(dir),
            Stage::TrainDbn => stage_train_dbn(cfg, dir),
            Stage::Quantize => stage_quantize(dir),
            Stage::TrainDetector => stage_train_detector(cfg, dir),
            Stage::Detect => stage_detect(cfg, dir),
            Stage::TrainMfcnn => stage_train_mfcnn(cfg, dir),
            Stage::Enhance => stage_enhance(dir),
            Stage::Report => stage_report(dir).map(|_| ()),
        });
    result.map_err(|e| Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    })
}

/// Every stage in order, returning the final report.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EnhancementReport> {
    for stage in Stage::ALL {
        run_stage(stage, cfg)?;
    }
    read_report(&cfg.work_dir)
}

/// Reads `report.csv` back from a work directory.
pub fn read_report(dir: &Path) -> Result<EnhancementReport> {
    let rows = parse_report_csv(&read(&dir.join(REPORT_FILE))?)?;
    Ok(EnhancementReport::new(rows))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| Error::parse("text file", 0, format!("{} is not UTF-8", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn stem(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn features(dir: &Path) -> Result<Vec<QualityRecord>> {
    metrics::parse_features_csv(&read(&dir.join(FEATURES_FILE))?)
}

fn labels(dir: &Path) -> Result<(Vec<f64>, Vec<bool>)> {
    detector::parse_labels_csv(&read(&dir.join(LABELS_FILE))?)
}

fn aligned(raw: &Sequence, other: &Sequence, what: &'static str) -> Result<()> {
    if raw.len() != other.len() {
        return Err(Error::LengthMismatch {
            what,
            left: raw.len(),
            right: other.len(),
        });
    }
    Ok(())
}

fn stage_degrade(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let raw = match &cfg.raw {
        Some(path) => load_sequence(path)?,
        None => {
            let spec = crate::frame_io::SynthSpec {
                seed: stage_seed(cfg.seed, "synth"),
                ..cfg.synth.clone()
            };
            synthesize_sequence(&spec)?
        }
    };
    let qp = pattern_schedule(&cfg.qp_pattern, raw.len())?;
    let compressed = degrade(&raw, &qp)?;
    save_sequence(&raw, &dir.join(RAW_DIR))?;
    let meta = SequenceMeta {
        qp: Some(qp.values().to_vec()),
        ..Default::default()
    };
    save_sequence_with_meta(&compressed, &dir.join(COMPRESSED_DIR), &meta)?;
    write(&dir.join(QP_FILE), qp.to_text())
}

fn stage_features(dir: &Path) -> Result<()> {
    let raw = load_sequence(&dir.join(RAW_DIR))?;
    let compressed = load_sequence(&dir.join(COMPRESSED_DIR))?;
    let qp = QpSchedule::parse(&read_text(&dir.join(QP_FILE))?)?;
    let records = metrics::feature_table(&raw, &compressed, &qp)?;
    let mut out = Vec::new();
    metrics::write_features_csv(&records, &mut out).map_err(|e| Error::io(dir.join(FEATURES_FILE), e))?;
    write(&dir.join(FEATURES_FILE), out)
}

fn stage_train_dbn(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let records = features(dir)?;
    let seed = stage_seed(cfg.seed, Stage::TrainDbn.name());
    let mut net = Dbn::new(&cfg.dbn, seed);
    let x = dbn::pretrain(&mut net, &records, &cfg.dbn, seed)?;
    let truth: Vec<bool> = records.iter().map(|r| r.is_pqf).collect();
    dbn::finetune(&mut net, &x, &truth, &cfg.dbn, seed.wrapping_add(2))?;
    save_params(&net.to_params()?, &stem(dir, DBN_STEM))
}

fn stage_quantize(dir: &Path) -> Result<()> {
    let net = Dbn::from_params(&load_params(&stem(dir, DBN_STEM))?)?;
    let q = dbn::quantize(&net, &features(dir)?)?;
    let mut out = Vec::new();
    detector::write_quantized_csv(&q, &mut out).map_err(|e| Error::io(dir.join(QUANTIZED_FILE), e))?;
    write(&dir.join(QUANTIZED_FILE), out)
}

/// Every window of `len` consecutive frames (or the whole track when shorter).
fn windows(q: &[f64], truth: &[bool], len: usize) -> Vec<(Vec<f64>, Vec<bool>)> {
    let len = len.min(q.len());
    (0..=q.len() - len)
        .map(|s| (q[s..s + len].to_vec(), truth[s..s + len].to_vec()))
        .collect()
}

fn stage_train_detector(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let q = detector::parse_quantized_csv(&read(&dir.join(QUANTIZED_FILE))?)?;
    let truth: Vec<bool> = features(dir)?.iter().map(|r| r.is_pqf).collect();
    if q.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "quantized values vs feature rows",
            left: q.len(),
            right: truth.len(),
        });
    }
    let seed = stage_seed(cfg.seed, Stage::TrainDetector.name());
    let mut net = DetectorNet::new(cfg.detector.clone(), seed)?;
    detector::train_detector(&mut net, &windows(&q, &truth, cfg.detector_window), seed.wrapping_add(1))?;
    save_params(net.params(), &stem(dir, DETECTOR_STEM))
}

fn stage_detect(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let q = detector::parse_quantized_csv(&read(&dir.join(QUANTIZED_FILE))?)?;
    let net = DetectorNet::from_params(cfg.detector.clone(), load_params(&stem(dir, DETECTOR_STEM))?)?;
    let probs = detector::predict(&net, &q)?;
    let refined = detector::refine(&probs, &cfg.refine)?;
    let mut out = Vec::new();
    detector::write_labels_csv(&probs, &refined, &mut out).map_err(|e| Error::io(dir.join(LABELS_FILE), e))?;
    write(&dir.join(LABELS_FILE), out)
}

fn stage_train_mfcnn(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let raw = load_sequence(&dir.join(RAW_DIR))?;
    let compressed = load_sequence(&dir.join(COMPRESSED_DIR))?;
    aligned(&raw, &compressed, "raw vs compressed frames")?;
    let (_, pqf) = labels(dir)?;
    let samples = trainer::make_samples(&compressed, &raw, &pqf)?;
    let seed = stage_seed(cfg.seed, Stage::TrainMfcnn.name());
    let mut mc = McSubnet::new(McConfig::default(), seed)?;
    let mut qe = QeSubnet::new(QeConfig::default(), seed.wrapping_add(1))?;
    let log = trainer::train_mfcnn(&mut mc, &mut qe, &samples, &cfg.mfcnn)?;
    save_params(mc.params(), &stem(dir, MC_STEM))?;
    save_params(qe.params(), &stem(dir, QE_STEM))?;
    write(&dir.join(TRAIN_LOG_FILE), log.to_csv())?;
    let switch = log.switch_step.map(|s| s.to_string()).unwrap_or_else(|| "none".into());
    write(
        &dir.join(TRAIN_SUMMARY_FILE),
        format!("steps = {}\nswitch_step = {switch}\n", log.rows.len()),
    )
}

fn stage_enhance(dir: &Path) -> Result<()> {
    let compressed = load_sequence(&dir.join(COMPRESSED_DIR))?;
    let (_, pqf) = labels(dir)?;
    let mc = McSubnet::from_params(McConfig::default(), load_params(&stem(dir, MC_STEM))?)?;
    let qe = QeSubnet::from_params(QeConfig::default(), load_params(&stem(dir, QE_STEM))?)?;
    let enhanced = trainer::enhance_sequence(&mc, &qe, &compressed, &pqf)?;
    save_sequence(&enhanced, &dir.join(ENHANCED_DIR))
}

/// Reads the phase switch step recorded by `train-mfcnn`, if any.
pub fn read_switch_step(dir: &Path) -> Result<Option<usize>> {
    let path = dir.join(TRAIN_SUMMARY_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let map = parse_key_values(&read_text(&path)?)?;
    match map.get("switch_step").map(String::as_str) {
        None | Some("none") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::parse("training summary", 0, format!("bad switch step `{v}`"))),
    }
}

fn stage_report(dir: &Path) -> Result<EnhancementReport> {
    let raw = load_sequence(&dir.join(RAW_DIR))?;
    let compressed = load_sequence(&dir.join(COMPRESSED_DIR))?;
    aligned(&raw, &compressed, "raw vs compressed frames")?;
    let records = features(dir)?;
    let (_, pqf) = labels(dir)?;
    if pqf.len() != raw.len() || records.len() != raw.len() {
        return Err(Error::LengthMismatch {
            what: "labels or features vs frames",
            left: pqf.len().min(records.len()),
            right: raw.len(),
        });
    }
    let enhanced_dir = dir.join(ENHANCED_DIR);
    let enhanced = if enhanced_dir.exists() {
        let e = load_sequence(&enhanced_dir)?;
        aligned(&raw, &e, "raw vs enhanced frames")?;
        Some(e)
    } else {
        None
    };
    let mut rows = Vec::with_capacity(raw.len());
    for (t, (r, c)) in raw.frames().iter().zip(compressed.frames()).enumerate() {
        let after = enhanced.as_ref().map(|e| &e.frames()[t]);
        rows.push(ReportRow {
            frame: t,
            is_pqf: pqf[t],
            psnr_before: metrics::psnr(r, c)?,
            psnr_after: after.map(|a| metrics::psnr(r, a)).transpose()?,
            ssim_before: metrics::ssim(r, c)?,
            ssim_after: after.map(|a| metrics::ssim(r, a)).transpose()?,
        });
    }
    let report = EnhancementReport::new(rows);
    write(&dir.join(REPORT_FILE), report.to_checked_csv()?)?;
    let truth: Vec<bool> = records.iter().map(|r| r.is_pqf).collect();
    let scores = detector::detector_report(&pqf, &truth)?;
    write(
        &dir.join(REPORT_SUMMARY_FILE),
        report.summary_text(Some(&scores), read_switch_step(dir)?),
    )?;
    let traces = dir.join(TRACES_DIR);
    fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    for (name, text) in feature_traces(&records) {
        write(&traces.join(format!("{name}.csv")), text)?;
    }
    write(&traces.join("psnr_before_after.csv"), report.psnr_trace())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("all".parse::<Stage>().is_err());
    }

    #[test]
    fn windows_cover_track() {
        let q = [0.1, 0.2, 0.3, 0.4];
        let t = [true, false, false, true];
        assert_eq!(windows(&q, &t, 3).len(), 2);
        assert_eq!(windows(&q, &t, 10), vec![(q.to_vec(), t.to_vec())]);
    }

    #[test]
    fn missing_inputs_are_stage_tagged() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            work_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let err = run_stage(Stage::Quantize, &cfg).unwrap_err();
        assert!(err.to_string().starts_with("stage `quantize` failed"), "{err}");
    }
}
