use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    pub threshold: f64,
    /// Largest allowed distance between consecutive PQFs and from either
    /// sequence end to its nearest PQF.
    pub d_max: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            d_max: 3,
        }
    }
}

/// Whether `labels` meet the spacing bound: at least one PQF, no two
/// adjacent, and every gap (interior or to an end) at most `d_max`.
pub fn satisfies_spacing(labels: &[bool], d_max: usize) -> bool {
    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    if idx.is_empty() || !end_gaps_ok(labels, d_max) {
        return false;
    }
    idx.windows(2).all(|w| w[1] - w[0] >= 2 && w[1] - w[0] <= d_max)
}

pub fn end_gaps_ok(labels: &[bool], d_max: usize) -> bool {
    let first = labels.iter().position(|&l| l);
    let last = labels.iter().rposition(|&l| l);
    match (first, last) {
        (Some(f), Some(l)) => f <= d_max && labels.len() - 1 - l <= d_max,
        _ => false,
    }
}

enum Gap {
    Left { first: usize },
    Right { last: usize },
    Interior { a: usize, b: usize },
}

// Widest gap wider than `d_max`; the earliest wins among equals.
fn widest_violation(labels: &[bool], d_max: usize) -> Option<Gap> {
    let n = labels.len();
    let idx: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    let first = *idx.first()?;
    let last = *idx.last()?;
    let mut best: Option<(usize, Gap)> = None;
    let mut consider = |width: usize, gap: Gap| {
        if width > d_max && best.as_ref().is_none_or(|(w, _)| width > *w) {
            best = Some((width, gap));
        }
    };
    consider(first, Gap::Left { first });
    for w in idx.windows(2) {
        consider(w[1] - w[0], Gap::Interior { a: w[0], b: w[1] });
    }
    consider(n - 1 - last, Gap::Right { last });
    best.map(|(_, g)| g)
}

// Highest probability in `range`, earliest on ties.
fn argmax(probs: &[f64], range: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in range {
        if best.is_none_or(|b| probs[i] > probs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Threshold, thin each run of consecutive PQFs to its most probable
/// frame, then promote frames until the spacing bound holds.
pub fn refine(probs: &[f64], cfg: &RefineConfig) -> Result<Vec<bool>> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("refine of an empty sequence".into()));
    }
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {} outside (0, 1)", cfg.threshold)));
    }
    if cfg.d_max < 2 {
        return Err(Error::InvalidArgument(format!("d_max {} below 2", cfg.d_max)));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("probability {bad}")));
    }
    let n = probs.len();
    let raw: Vec<bool> = probs.iter().map(|&p| p >= cfg.threshold).collect();

    let mut labels = vec![false; n];
    let mut i = 0;
    while i < n {
        if !raw[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && raw[i] {
            i += 1;
        }
        labels[argmax(probs, start..i).expect("non-empty run")] = true;
    }

    if !labels.iter().any(|&l| l) {
        labels[argmax(probs, 0..n).expect("non-empty")] = true;
    }
    let d = cfg.d_max;
    while let Some(gap) = widest_violation(&labels, d) {
        let pick = match gap {
            Gap::Left { first } => argmax(probs, 0..first.min(d)),
            Gap::Right { last } => argmax(probs, (n - d).max(last + 1)..n),
            Gap::Interior { a, b } => {
                let lo = (a + b) / 2;
                let hi = (a + b).div_ceil(2);
                if probs[hi] > probs[lo] {
                    Some(hi)
                } else {
                    Some(lo)
                }
            }
        };
        labels[pick.expect("a violating gap has candidates")] = true;
    }
    Ok(labels)
}
