use std::io::Write;

use super::QualityRecord;
use crate::{Error, Result};

pub const FEATURES_HEADER: &str = "frame,psnr,ssim,qp,is_pqf";

/// Writes the feature table. Floats use the shortest representation that
/// reads back to the same value.
pub fn write_features_csv<W: Write>(records: &[QualityRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FEATURES_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.frame_index,
            r.psnr,
            r.ssim,
            r.qp,
            u8::from(r.is_pqf)
        )?;
    }
    Ok(())
}

pub(crate) fn parse_bit(field: &str, line: usize, what: &'static str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::parse(what, line, format!("expected 0 or 1, got `{other}`"))),
    }
}

pub(crate) fn csv_reader<'a>(data: &'a [u8], header: &str, what: &'static str) -> Result<csv::Reader<&'a [u8]>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(data);
    let found: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if found.join(",") != header {
        return Err(Error::parse(what, 1, format!("expected header `{header}`")));
    }
    Ok(reader)
}

pub(crate) fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    line: usize,
    what: &'static str,
) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::parse(what, line, format!("missing column {idx}")))?
        .trim();
    raw.parse()
        .map_err(|_| Error::parse(what, line, format!("bad value `{raw}` in column {idx}")))
}

/// Parses a feature table written by [`write_features_csv`].
pub fn parse_features_csv(data: &[u8]) -> Result<Vec<QualityRecord>> {
    const WHAT: &str = "features csv";
    let mut reader = csv_reader(data, FEATURES_HEADER, WHAT)?;
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() != 5 {
            return Err(Error::parse(WHAT, line, "expected 5 columns"));
        }
        let frame_index: usize = field(&row, 0, line, WHAT)?;
        let psnr: f64 = field(&row, 1, line, WHAT)?;
        let ssim: f64 = field(&row, 2, line, WHAT)?;
        let qp: u8 = field(&row, 3, line, WHAT)?;
        let is_pqf = parse_bit(row[4].trim(), line, WHAT)?;
        if !psnr.is_finite() || psnr > super::PSNR_CAP {
            return Err(Error::parse(WHAT, line, format!("psnr {psnr} out of range")));
        }
        if !(-1.0..=1.0).contains(&ssim) {
            return Err(Error::parse(WHAT, line, format!("ssim {ssim} out of range")));
        }
        if qp > crate::degrader::QP_MAX {
            return Err(Error::parse(WHAT, line, format!("qp {qp} out of range")));
        }
        if frame_index != records.len() {
            return Err(Error::parse(WHAT, line, "frame indices must count up from 0"));
        }
        records.push(QualityRecord {
            frame_index,
            psnr,
            ssim,
            qp,
            is_pqf,
        });
    }
    Ok(records)
}
