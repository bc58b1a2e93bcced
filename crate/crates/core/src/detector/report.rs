use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectorScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 with PQF as the positive class. Empty
/// denominators give 0.
pub fn detector_report(predicted: &[bool], truth: &[bool]) -> Result<DetectorScores> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            what: "predicted vs true labels",
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let tp = predicted.iter().zip(truth).filter(|(p, t)| **p && **t).count();
    let pp = predicted.iter().filter(|p| **p).count();
    let ap = truth.iter().filter(|t| **t).count();
    let precision = ratio(tp, pp);
    let recall = ratio(tp, ap);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(DetectorScores { precision, recall, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_arithmetic() {
        let s = detector_report(&[true, false, true, false], &[true, false, false, false]).unwrap();
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let s = detector_report(&[false; 3], &[true, false, true]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = detector_report(&[true, false], &[true, false]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert!(detector_report(&[true], &[]).is_err());
    }
}
