//! Per-frame before/after quality table, its aggregates, and the plain
//! two-column traces used for plotting.

use std::fmt::Write as _;

use crate::detector::DetectorScores;
use crate::metrics::QualityRecord;
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "frame,is_pqf,psnr_before,psnr_after,ssim_before,ssim_after";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub frame: usize,
    pub is_pqf: bool,
    pub psnr_before: f64,
    pub psnr_after: Option<f64>,
    pub ssim_before: f64,
    pub ssim_after: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    /// Mean PSNR gain in dB over non-PQF rows that carry an after value.
    pub mean_delta_psnr: f64,
    pub mean_delta_ssim: f64,
    pub non_pqf_frames: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnhancementReport {
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

/// Means over the non-PQF rows with both after values; zero when there are none.
pub fn aggregate(rows: &[ReportRow]) -> Aggregates {
    let mut dp = 0.0;
    let mut ds = 0.0;
    let mut n = 0usize;
    for r in rows.iter().filter(|r| !r.is_pqf) {
        if let (Some(pa), Some(sa)) = (r.psnr_after, r.ssim_after) {
            dp += pa - r.psnr_before;
            ds += sa - r.ssim_before;
            n += 1;
        }
    }
    let k = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    Aggregates {
        mean_delta_psnr: dp * k,
        mean_delta_ssim: ds * k,
        non_pqf_frames: n,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EnhancementReport {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        let aggregates = aggregate(&rows);
        Self { rows, aggregates }
    }

    /// The table with shortest round-trip floats; missing after values are
    /// left empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.frame,
                u8::from(r.is_pqf),
                r.psnr_before,
                opt(r.psnr_after),
                r.ssim_before,
                opt(r.ssim_after)
            );
        }
        out
    }

    /// Serializes the table and verifies that re-reading it reproduces the
    /// aggregates to within `1e-12`.
    pub fn to_checked_csv(&self) -> Result<String> {
        let text = self.to_csv();
        let again = aggregate(&parse_report_csv(text.as_bytes())?);
        let a = &self.aggregates;
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
        if again.non_pqf_frames != a.non_pqf_frames
            || !close(again.mean_delta_psnr, a.mean_delta_psnr)
            || !close(again.mean_delta_ssim, a.mean_delta_ssim)
        {
            return Err(Error::NonFinite(format!(
                "report aggregates do not survive export: {a:?} vs {again:?}"
            )));
        }
        Ok(text)
    }

    pub fn summary_text(&self, scores: Option<&DetectorScores>, switch_step: Option<usize>) -> String {
        let a = &self.aggregates;
        let mut out = String::new();
        let _ = writeln!(out, "mean_delta_psnr = {}", a.mean_delta_psnr);
        let _ = writeln!(out, "mean_delta_ssim = {}", a.mean_delta_ssim);
        let _ = writeln!(out, "non_pqf_frames = {}", a.non_pqf_frames);
        if let Some(s) = scores {
            let _ = writeln!(out, "precision = {}", s.precision);
            let _ = writeln!(out, "recall = {}", s.recall);
            let _ = writeln!(out, "f1 = {}", s.f1);
        }
        if let Some(s) = switch_step {
            let _ = writeln!(out, "switch_step = {s}");
        }
        out
    }

    /// `frame,psnr_before,psnr_after`, or `frame,psnr_before` when any
    /// after value is missing.
    pub fn psnr_trace(&self) -> String {
        let full = self.rows.iter().all(|r| r.psnr_after.is_some());
        let mut out = String::from(if full {
            "frame,psnr_before,psnr_after\n"
        } else {
            "frame,psnr_before\n"
        });
        for r in &self.rows {
            match r.psnr_after {
                Some(a) if full => {
                    let _ = writeln!(out, "{},{},{}", r.frame, r.psnr_before, a);
                }
                _ => {
                    let _ = writeln!(out, "{},{}", r.frame, r.psnr_before);
                }
            }
        }
        out
    }
}

/// Two-column traces `(file stem, csv text)` of QP, PSNR and SSIM, with the
/// values printed exactly as in the feature table.
pub fn feature_traces(records: &[QualityRecord]) -> Vec<(&'static str, String)> {
    let mut qp = String::from("frame,qp\n");
    let mut psnr = String::from("frame,psnr\n");
    let mut ssim = String::from("frame,ssim\n");
    for r in records {
        let _ = writeln!(qp, "{},{}", r.frame_index, r.qp);
        let _ = writeln!(psnr, "{},{}", r.frame_index, r.psnr);
        let _ = writeln!(ssim, "{},{}", r.frame_index, r.ssim);
    }
    vec![("qp", qp), ("psnr", psnr), ("ssim", ssim)]
}

/// Parses a table written by [`EnhancementReport::to_csv`].
pub fn parse_report_csv(data: &[u8]) -> Result<Vec<ReportRow>> {
    use crate::metrics::csv_io::{csv_reader, field, parse_bit};
    const WHAT: &str = "report csv";
    let mut reader = csv_reader(data, REPORT_HEADER, WHAT)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != 6 {
            return Err(Error::parse(WHAT, line, "expected 6 columns"));
        }
        let frame: usize = field(&rec, 0, line, WHAT)?;
        if frame != i {
            return Err(Error::parse(WHAT, line, format!("frame {frame} out of order")));
        }
        let optional = |idx: usize| -> Result<Option<f64>> {
            if rec.get(idx).map(str::trim).unwrap_or("").is_empty() {
                Ok(None)
            } else {
                field::<f64>(&rec, idx, line, WHAT).map(Some)
            }
        };
        let row = ReportRow {
            frame,
            is_pqf: parse_bit(rec.get(1).unwrap_or("").trim(), line, WHAT)?,
            psnr_before: field(&rec, 2, line, WHAT)?,
            psnr_after: optional(3)?,
            ssim_before: field(&rec, 4, line, WHAT)?,
            ssim_after: optional(5)?,
        };
        let all = [Some(row.psnr_before), row.psnr_after, Some(row.ssim_before), row.ssim_after];
        if all.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::parse(WHAT, line, "non-finite value"));
        }
        rows.push(row);
    }
    Ok(rows)
}
