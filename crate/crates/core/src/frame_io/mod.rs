//! Luma frames, frame sequences, and their on-disk layout.
//!
//! A sequence directory holds one binary greymap per frame named by its
//! zero-padded index (`000.pgm`, `001.pgm`, ...), plus an optional
//! [`META_FILE`] sidecar. Frames are center-cropped to multiples of 8 on
//! load so every frame tiles exactly into 8×8 transform blocks.

mod meta;
mod pgm;
mod synth;

use std::fs;
use std::path::Path;

pub use meta::{parse_key_values, SequenceMeta, META_FILE};
pub use pgm::{encode_pgm, parse_pgm, parse_pgm_stream, GreyImage};
pub use synth::{synthesize_sequence, SynthKind, SynthSpec};

use crate::{Error, Result};

/// Smallest allowed frame extent.
pub const MIN_EXTENT: usize = 8;
/// Frames shorter than this cannot hold an interior frame.
pub const MIN_SEQUENCE_LEN: usize = 3;

/// One 8-bit luma image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LumaFrame {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl LumaFrame {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width < MIN_EXTENT || height < MIN_EXTENT || !width.is_multiple_of(8) || !height.is_multiple_of(8) {
            return Err(Error::InvalidDimensions(format!(
                "{width}x{height}: extents must be multiples of 8 and at least {MIN_EXTENT}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::LengthMismatch {
                what: "frame samples vs width*height",
                left: samples.len(),
                right: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Center-crops an arbitrary greymap down to multiples of 8. An odd
    /// surplus leaves the extra row/column on the right/bottom.
    pub fn from_grey_cropped(image: &GreyImage) -> Result<Self> {
        let w = image.width - image.width % 8;
        let h = image.height - image.height % 8;
        if w < MIN_EXTENT || h < MIN_EXTENT {
            return Err(Error::InvalidDimensions(format!(
                "{}x{} is smaller than {MIN_EXTENT}x{MIN_EXTENT} after cropping",
                image.width, image.height
            )));
        }
        let left = (image.width - w) / 2;
        let top = (image.height - h) / 2;
        let mut samples = Vec::with_capacity(w * h);
        for y in top..top + h {
            let row = y * image.width;
            samples.extend_from_slice(&image.samples[row + left..row + left + w]);
        }
        Self::new(w, h, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    /// Samples scaled to `[0, 1]`, the unit the networks work in.
    pub fn to_unit(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s) / 255.0).collect()
    }

    /// Inverse of [`LumaFrame::to_unit`]: scales by 255, clamps, rounds half
    /// away from zero.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let samples = values.iter().map(|&v| crate::to_sample(v * 255.0)).collect();
        Self::new(width, height, samples)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(self.width, self.height, &self.samples)
    }
}

/// An ordered run of equally sized frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    name: String,
    frames: Vec<LumaFrame>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frames: Vec<LumaFrame>) -> Result<Self> {
        if frames.len() < MIN_SEQUENCE_LEN {
            return Err(Error::InvalidArgument(format!(
                "sequence needs at least {MIN_SEQUENCE_LEN} frames, got {}",
                frames.len()
            )));
        }
        let dims = frames[0].dims();
        if let Some(f) = frames.iter().find(|f| f.dims() != dims) {
            return Err(Error::InconsistentDimensions {
                expected: dims,
                found: f.dims(),
            });
        }
        Ok(Self {
            name: name.into(),
            frames,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frames(&self) -> &[LumaFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }

    pub fn into_frames(self) -> Vec<LumaFrame> {
        self.frames
    }
}

/// File name for frame `index`.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:03}.pgm")
}

fn frame_index(file_name: &str) -> Option<usize> {
    let stem = file_name.strip_suffix(".pgm")?;
    if stem.len() < 3 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Reads the sidecar of a sequence directory, if there is one.
pub fn load_meta(dir: &Path) -> Result<SequenceMeta> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Ok(SequenceMeta::default());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    SequenceMeta::parse(&text)
}

/// Loads a sequence from a frame directory or from a single file holding
/// concatenated greymaps.
pub fn load_sequence(path: &Path) -> Result<Sequence> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    if path.is_file() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let frames = parse_pgm_stream(&bytes)?
            .iter()
            .map(LumaFrame::from_grey_cropped)
            .collect::<Result<Vec<_>>>()?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Sequence::new(name, frames);
    }

    let mut indexed = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        if let Some(idx) = entry.file_name().to_str().and_then(frame_index) {
            indexed.push((idx, entry.path()));
        }
    }
    indexed.sort();
    let mut frames = Vec::with_capacity(indexed.len());
    for (_, file) in &indexed {
        let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
        let (image, _) = parse_pgm(&bytes)?;
        frames.push(LumaFrame::from_grey_cropped(&image)?);
    }
    let meta = load_meta(path)?;
    Sequence::new(meta.name.unwrap_or_default(), frames)
}

/// Writes a sequence as `NNN.pgm` files, recording a non-empty name in the
/// sidecar. Stale frame files in the directory are removed first.
pub fn save_sequence(seq: &Sequence, dir: &Path) -> Result<()> {
    let meta = SequenceMeta {
        name: (!seq.name.is_empty()).then(|| seq.name.clone()),
        ..Default::default()
    };
    save_sequence_with_meta(seq, dir, &meta)
}

pub fn save_sequence_with_meta(seq: &Sequence, dir: &Path, meta: &SequenceMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if frame_index(&name).is_some() || name == META_FILE {
            fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        }
    }
    for (i, frame) in seq.frames.iter().enumerate() {
        let path = dir.join(frame_file_name(i));
        fs::write(&path, frame.to_pgm()).map_err(|e| Error::io(&path, e))?;
    }
    let mut meta = meta.clone();
    if meta.name.is_none() && !seq.name.is_empty() {
        meta.name = Some(seq.name.clone());
    }
    if !meta.is_empty() {
        let path = dir.join(META_FILE);
        fs::write(&path, meta.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, seed: u8) -> LumaFrame {
        let samples = (0..w * h).map(|i| (i as u8).wrapping_mul(7).wrapping_add(seed)).collect();
        LumaFrame::new(w, h, samples).unwrap()
    }

    #[test]
    fn directory_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let seq = Sequence::new("clip", (0..3).map(|i| frame(48, 48, i)).collect()).unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let back = load_sequence(dir.path()).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.len(), 3);
        assert_eq!(back.dims(), (48, 48));
    }

    #[test]
    fn center_crop_50_to_48() {
        let samples: Vec<u8> = (0..50 * 50).map(|i| (i % 251) as u8).collect();
        let img = GreyImage {
            width: 50,
            height: 50,
            samples: samples.clone(),
        };
        let f = LumaFrame::from_grey_cropped(&img).unwrap();
        assert_eq!(f.dims(), (48, 48));
        assert_eq!(f.at(0, 0), samples[51]);
        assert_eq!(f.at(47, 47), samples[48 * 50 + 48]);
    }

    #[test]
    fn inconsistent_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("000.pgm"), frame(48, 48, 0).to_pgm()).unwrap();
        fs::write(dir.path().join("001.pgm"), frame(64, 64, 0).to_pgm()).unwrap();
        fs::write(dir.path().join("002.pgm"), frame(48, 48, 0).to_pgm()).unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("inconsistent dimensions"), "{err}");
    }

    #[test]
    fn missing_path() {
        let err = load_sequence(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, Error::MissingPath(_)));
    }

    #[test]
    fn empty_name_writes_frames_only() {
        let dir = tempfile::tempdir().unwrap();
        let seq = Sequence::new("", (0..24).map(|i| frame(8, 8, i)).collect()).unwrap();
        save_sequence(&seq, dir.path()).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names.len(), 24);
        assert_eq!(names[0], "000.pgm");
        assert_eq!(names[23], "023.pgm");
    }

    #[test]
    fn container_file_of_concatenated_frames() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.pgm");
        let mut bytes = Vec::new();
        for i in 0..4 {
            bytes.extend(frame(16, 8, i).to_pgm());
        }
        fs::write(&path, bytes).unwrap();
        let seq = load_sequence(&path).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(seq.name(), "clip");
    }

    #[test]
    fn save_clears_stale_frames() {
        let dir = tempfile::tempdir().unwrap();
        let long = Sequence::new("", (0..5).map(|i| frame(8, 8, i)).collect()).unwrap();
        let short = Sequence::new("", (0..3).map(|i| frame(8, 8, i)).collect()).unwrap();
        save_sequence(&long, dir.path()).unwrap();
        save_sequence(&short, dir.path()).unwrap();
        assert_eq!(load_sequence(dir.path()).unwrap(), short);
    }

    #[test]
    fn frame_invariants() {
        assert!(LumaFrame::new(12, 8, vec![0; 96]).is_err());
        assert!(LumaFrame::new(8, 8, vec![0; 63]).is_err());
        assert!(Sequence::new("", vec![frame(8, 8, 0), frame(8, 8, 1)]).is_err());
    }
}
