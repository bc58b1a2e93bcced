//! Flat `key = value` text, used for the sequence sidecar and for pipeline
//! configuration files.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Name of the sidecar written next to a sequence's frames.
pub const META_FILE: &str = "meta.txt";

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; keys must be unique.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("key/value", i + 1, "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
        {
            return Err(Error::parse("key/value", i + 1, format!("invalid key `{key}`")));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::parse("key/value", i + 1, format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

/// Sequence sidecar contents. Every field is optional.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceMeta {
    pub name: Option<String>,
    pub fps: Option<f64>,
    pub qp: Option<Vec<u8>>,
}

impl SequenceMeta {
    pub fn is_empty(&self) -> bool {
        self.name.is_none() && self.fps.is_none() && self.qp.is_none()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let mut meta = SequenceMeta::default();
        for (key, value) in map {
            match key.as_str() {
                "name" => meta.name = Some(value),
                "fps" => {
                    let fps: f64 = value
                        .parse()
                        .map_err(|_| Error::parse("meta", 0, format!("bad fps `{value}`")))?;
                    if !fps.is_finite() || fps <= 0.0 {
                        return Err(Error::parse("meta", 0, "fps must be positive"));
                    }
                    meta.fps = Some(fps);
                }
                "qp" => {
                    let qp = value
                        .split(',')
                        .map(|v| v.trim().parse::<u8>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::parse("meta", 0, format!("bad qp list `{value}`")))?;
                    meta.qp = Some(qp);
                }
                // Unknown keys are tolerated so other tools can annotate.
                _ => {}
            }
        }
        Ok(meta)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(name) = &self.name {
            out.push_str(&format!("name = {name}\n"));
        }
        if let Some(fps) = self.fps {
            out.push_str(&format!("fps = {fps}\n"));
        }
        if let Some(qp) = &self.qp {
            let list: Vec<String> = qp.iter().map(u8::to_string).collect();
            out.push_str(&format!("qp = {}\n", list.join(",")));
        }
        out
    }
}
