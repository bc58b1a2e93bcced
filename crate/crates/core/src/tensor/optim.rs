//! Parameter update rules. Both consume the stored gradients and clear them.

use std::collections::BTreeMap;

use super::ParamSet;
use crate::{Error, Result};

fn check_grads(params: &ParamSet) -> Result<()> {
    for (name, t) in params.iter() {
        if t.requires_grad() && t.grad().is_none() {
            return Err(Error::MissingGradient(name.to_string()));
        }
    }
    Ok(())
}

/// Plain gradient descent: `w ← w − lr·g`.
pub fn sgd_step(params: &mut ParamSet, lr: f64) -> Result<()> {
    check_grads(params)?;
    for (_, t) in params.iter_mut() {
        if !t.requires_grad() {
            continue;
        }
        let g = t.grad().expect("checked").to_vec();
        t.values_mut().iter_mut().zip(&g).for_each(|(w, g)| *w -= lr * g);
        t.set_grad(None);
    }
    Ok(())
}

/// Heavy-ball momentum: `v ← μ·v − lr·g`, `w ← w + v`. With `μ = 0` this is
/// [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Momentum {
    pub lr: f64,
    pub mu: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Momentum {
    pub fn new(lr: f64, mu: f64) -> Self {
        Self {
            lr,
            mu,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        check_grads(params)?;
        for (name, t) in params.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            let g = t.grad().expect("checked").to_vec();
            let v = self.velocity.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
            for ((w, v), g) in t.values_mut().iter_mut().zip(v.iter_mut()).zip(&g) {
                *v = self.mu * *v - self.lr * g;
                *w += *v;
            }
            t.set_grad(None);
        }
        Ok(())
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        check_grads(params)?;
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, t) in params.iter_mut() {
            if !t.requires_grad() {
                continue;
            }
            let g = t.grad().expect("checked").to_vec();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (i, w) in t.values_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            t.set_grad(None);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(w: f64, g: Option<f64>) -> ParamSet {
        let mut p = ParamSet::new(0);
        let mut t = Tensor::scalar(w).trainable();
        t.set_grad(g.map(|g| vec![g]));
        p.insert("w", t).unwrap();
        p
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = one(1.0, Some(0.5));
        sgd_step(&mut p, 0.1).unwrap();
        assert!((p.get("w").unwrap().values()[0] - 0.95).abs() < 1e-15);
        assert!(p.get("w").unwrap().grad().is_none());
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = one(1.25, Some(0.0));
        sgd_step(&mut p, 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().values()[0], 1.25);
        let mut p = one(1.25, Some(0.0));
        Adam::new(0.1).step(&mut p).unwrap();
        assert_eq!(p.get("w").unwrap().values()[0], 1.25);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        for g in [1e-4, 0.3, 250.0, -7.0] {
            let mut p = one(0.0, Some(g));
            Adam::new(0.01).step(&mut p).unwrap();
            let moved = p.get("w").unwrap().values()[0];
            assert!((moved.abs() - 0.01).abs() < 1e-6, "g={g} moved {moved}");
            assert!(moved * g < 0.0);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = one(1.0, None);
        assert!(matches!(sgd_step(&mut p, 0.1), Err(Error::MissingGradient(_))));
        assert!(matches!(Adam::new(0.1).step(&mut p), Err(Error::MissingGradient(_))));
    }
}
