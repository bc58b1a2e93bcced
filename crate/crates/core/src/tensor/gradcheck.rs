//! Central-difference verification of reverse-mode gradients.
//!
//! An entry whose `±eps` evaluations take a different branch of a
//! piecewise operation (an activation sign flip, a bilinear cell change)
//! than the base evaluation straddles a kink, where the derivative is not
//! defined. Such entries are counted in [`GradCheckReport::skipped`] rather
//! than compared.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamSet, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation half-width.
    pub eps: f64,
    /// Check at most this many entries per tensor, chosen at random.
    pub max_entries: Option<usize>,
    /// Instead of walking every tensor, check this many entries in total,
    /// each drawn from a uniformly chosen trainable tensor.
    pub max_total: Option<usize>,
    /// Seed for entry sampling.
    pub seed: u64,
    /// Denominator floor of the relative error, so that gradients which are
    /// zero on both routes compare as equal.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_entries: None,
            max_total: None,
            seed: 0,
            floor: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries not compared because a perturbation crossed a kink.
    pub skipped: usize,
}

fn eval<F>(f: &mut F, params: &ParamSet) -> Result<(f64, u64)>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss {v} during gradient check")));
    }
    Ok((v, g.branch_signature()))
}

/// Compares the gradient of every trainable parameter against central
/// differences of `f` and reports the largest relative error
/// `|a − n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(params: &ParamSet, opts: &GradCheckOptions, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParamSet) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let base_sig = g.branch_signature();
    let grads = g.backward(loss)?;
    let mut analytic = params.clone();
    analytic.clear_grads();
    analytic.absorb(&g, &grads);
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let names: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad())
        .map(|(n, _)| n.to_string())
        .collect();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    match opts.max_total {
        Some(total) if !names.is_empty() => {
            for _ in 0..total {
                let k = rng.gen_range(0..names.len());
                let n = params.get(&names[k]).expect("listed").len();
                if n > 0 {
                    picks.push((k, rng.gen_range(0..n)));
                }
            }
        }
        _ => {
            for (k, name) in names.iter().enumerate() {
                let n = params.get(name).expect("listed").len();
                match opts.max_entries {
                    Some(m) if m < n => picks.extend(sample(&mut rng, n, m).into_iter().map(|i| (k, i))),
                    _ => picks.extend((0..n).map(|i| (k, i))),
                }
            }
        }
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for (k, i) in picks {
        let name = &names[k];
        let a = analytic
            .get(name)
            .and_then(|t| t.grad())
            .map_or(0.0, |g| g[i]);
        let orig = work.get(name).expect("cloned").values()[i];
        work.get_mut(name).expect("cloned").values_mut()[i] = orig + opts.eps;
        let (lp, sp) = eval(&mut f, &work)?;
        work.get_mut(name).expect("cloned").values_mut()[i] = orig - opts.eps;
        let (lm, sm) = eval(&mut f, &work)?;
        work.get_mut(name).expect("cloned").values_mut()[i] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * opts.eps);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), i));
        }
    }
    Ok(report)
}
