//! Flat little-endian `f64` blob plus a text manifest.
//!
//! Manifest layout:
//!
//! ```text
//! seed 42
//! mc.px.0.w 24,4,3,3 0 1
//! mc.px.0.b 24 6912 1
//! ```
//!
//! Each entry line is `name shape byte_offset trainable`. Entries are stored
//! back to back in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ParamSet, Tensor};
use crate::{Error, Result};

const WHAT: &str = "parameter manifest";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub requires_grad: bool,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn manifest_text(params: &ParamSet) -> String {
    let mut out = format!("seed {}\n", params.rng_seed());
    let mut offset = 0;
    for (name, t) in params.iter() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        out.push_str(&format!(
            "{name} {} {offset} {}\n",
            shape.join(","),
            u8::from(t.requires_grad())
        ));
        offset += 8 * t.len();
    }
    out
}

pub fn params_to_bytes(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, t) in params.iter() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Writes `<stem>.bin` and `<stem>.manifest`.
pub fn save_params(params: &ParamSet, stem: &Path) -> Result<()> {
    let bin = with_ext(stem, "bin");
    let man = with_ext(stem, "manifest");
    fs::write(&bin, params_to_bytes(params)).map_err(|e| Error::io(&bin, e))?;
    fs::write(&man, manifest_text(params)).map_err(|e| Error::io(&man, e))?;
    Ok(())
}

pub fn load_params(stem: &Path) -> Result<ParamSet> {
    let bin = with_ext(stem, "bin");
    let man = with_ext(stem, "manifest");
    if !man.exists() {
        return Err(Error::MissingPath(man));
    }
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let (seed, entries) = parse_manifest(&text)?;
    params_from_bytes(seed, &entries, &bytes)
}

/// Parses manifest text into the seed and the entry list.
pub fn parse_manifest(text: &str) -> Result<(u64, Vec<ManifestEntry>)> {
    let mut seed = None;
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if seed.is_none() {
            match fields.as_slice() {
                ["seed", s] => {
                    seed = Some(
                        s.parse::<u64>()
                            .map_err(|e| Error::parse(WHAT, line_no, format!("seed: {e}")))?,
                    );
                    continue;
                }
                _ => return Err(Error::parse(WHAT, line_no, "expected `seed N` first")),
            }
        }
        let [name, shape, offset, rg] = fields.as_slice() else {
            return Err(Error::parse(WHAT, line_no, "expected `name shape offset trainable`"));
        };
        let shape = shape
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(WHAT, line_no, format!("shape: {e}")))?;
        let offset = offset
            .parse::<usize>()
            .map_err(|e| Error::parse(WHAT, line_no, format!("offset: {e}")))?;
        let requires_grad = match *rg {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(WHAT, line_no, format!("trainable flag `{other}`"))),
        };
        entries.push(ManifestEntry {
            name: name.to_string(),
            shape,
            offset,
            requires_grad,
        });
    }
    let seed = seed.ok_or_else(|| Error::parse(WHAT, 0, "empty manifest"))?;
    Ok((seed, entries))
}

/// Rebuilds a parameter set from manifest entries and the value blob.
/// Entries must tile the blob exactly, in order.
pub fn params_from_bytes(seed: u64, entries: &[ManifestEntry], bytes: &[u8]) -> Result<ParamSet> {
    let mut params = ParamSet::new(seed);
    let mut cursor = 0usize;
    for (i, e) in entries.iter().enumerate() {
        let line = i + 2;
        if e.offset != cursor {
            return Err(Error::parse(
                WHAT,
                line,
                format!("offset {} where {cursor} was expected", e.offset),
            ));
        }
        let count = e
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .filter(|&n| n <= bytes.len() - cursor)
            .ok_or_else(|| Error::parse(WHAT, line, format!("`{}` runs past the value blob", e.name)))?;
        let values = bytes[cursor..cursor + count]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut t = Tensor::new(e.shape.clone(), values)?;
        if e.requires_grad {
            t = t.trainable();
        }
        params.insert(e.name.clone(), t).map_err(|err| Error::parse(WHAT, line, err.to_string()))?;
        cursor += count;
    }
    if cursor != bytes.len() {
        return Err(Error::LengthMismatch {
            what: "value blob vs manifest",
            left: bytes.len(),
            right: cursor,
        });
    }
    Ok(params)
}
