use std::io::Write;

use crate::metrics::csv_io::{csv_reader, field, parse_bit};
use crate::{Error, Result};

pub const QUANTIZED_HEADER: &str = "frame,q";
pub const LABELS_HEADER: &str = "frame,prob,is_pqf";

pub fn write_quantized_csv<W: Write>(q: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{QUANTIZED_HEADER}")?;
    for (i, v) in q.iter().enumerate() {
        writeln!(out, "{i},{v:.9}")?;
    }
    Ok(())
}

pub fn write_labels_csv<W: Write>(probs: &[f64], labels: &[bool], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{LABELS_HEADER}")?;
    for (i, (p, l)) in probs.iter().zip(labels).enumerate() {
        writeln!(out, "{i},{p:.9},{}", u8::from(*l))?;
    }
    Ok(())
}

fn probability(v: f64, line: usize, what: &'static str) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::parse(what, line, format!("value {v} outside [0, 1]")))
    }
}

fn check_index(frame: usize, expected: usize, line: usize, what: &'static str) -> Result<()> {
    if frame != expected {
        return Err(Error::parse(what, line, format!("frame {frame} where {expected} was expected")));
    }
    Ok(())
}

/// Reads `frame,q` rows; frames must count up from 0 and `q ∈ [0, 1]`.
pub fn parse_quantized_csv(data: &[u8]) -> Result<Vec<f64>> {
    const WHAT: &str = "quantized csv";
    let mut reader = csv_reader(data, QUANTIZED_HEADER, WHAT)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() != 2 {
            return Err(Error::parse(WHAT, line, "expected 2 columns"));
        }
        check_index(field(&row, 0, line, WHAT)?, i, line, WHAT)?;
        out.push(probability(field(&row, 1, line, WHAT)?, line, WHAT)?);
    }
    Ok(out)
}

/// Reads `frame,prob,is_pqf` rows into probabilities and labels.
pub fn parse_labels_csv(data: &[u8]) -> Result<(Vec<f64>, Vec<bool>)> {
    const WHAT: &str = "pqf labels csv";
    let mut reader = csv_reader(data, LABELS_HEADER, WHAT)?;
    let (mut probs, mut labels) = (Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() != 3 {
            return Err(Error::parse(WHAT, line, "expected 3 columns"));
        }
        check_index(field(&row, 0, line, WHAT)?, i, line, WHAT)?;
        probs.push(probability(field(&row, 1, line, WHAT)?, line, WHAT)?);
        labels.push(parse_bit(row[2].trim(), line, WHAT)?);
    }
    Ok((probs, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_roundtrip_nine_digits() {
        let mut buf = Vec::new();
        write_quantized_csv(&[0.5, 0.123456789123, 1.0], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "frame,q\n0,0.500000000\n1,0.123456789\n2,1.000000000\n");
        assert_eq!(parse_quantized_csv(&buf).unwrap(), vec![0.5, 0.123456789, 1.0]);
    }

    #[test]
    fn labels_roundtrip() {
        let mut buf = Vec::new();
        write_labels_csv(&[0.25, 0.75], &[false, true], &mut buf).unwrap();
        let (p, l) = parse_labels_csv(&buf).unwrap();
        assert_eq!(p, vec![0.25, 0.75]);
        assert_eq!(l, vec![false, true]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_quantized_csv(b"frame,q\n0,1.5\n").is_err());
        assert!(parse_quantized_csv(b"frame,q\n1,0.5\n").is_err());
        assert!(parse_quantized_csv(b"frame,x\n0,0.5\n").is_err());
        assert!(parse_quantized_csv(b"frame,q\n0,nan\n").is_err());
        assert!(parse_labels_csv(b"frame,prob,is_pqf\n0,0.5,2\n").is_err());
    }
}
